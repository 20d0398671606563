pub mod adversary;
pub mod cli;
pub mod data;
pub mod e3d;
mod error;
pub mod generator;
pub mod latent;
pub mod losses;
pub mod layers;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
