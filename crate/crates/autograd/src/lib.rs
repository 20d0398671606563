//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations needed by the video predictor are provided: elementwise
//! math, 3D convolution (2D as a special case), dense layers, channel-wise
//! normalization, bilinear resampling and a fused dot-product attention read.

mod check;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use check::{finite_difference, relative_error, worst_relative_error};
pub use graph::{attend, concat, conv2d, conv3d, linear, stack_time, Gradients, Graph, Var};
pub use kernels::attention_weights;
pub use optim::Adam;
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, AutogradError>;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    graph::stable_sigmoid(x)
}
