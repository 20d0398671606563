//! Training pipeline: configuration, alternating updates, checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod presets;
pub mod trainer;

pub use config::{DatasetConfig, ModelConfig, Splits, ValidationConfig};
pub use eval::{direction_counts, evaluate_run, sample_seed, DirectionCounts, EvalReport};
pub use trainer::{fit, validation_l1, FitOptions, FitSummary, Model, StepNoise, Trainer};
