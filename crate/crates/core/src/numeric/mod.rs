//! Minimal reverse-mode autodiff engine and optimizer.

mod adam;
pub mod gradcheck;
mod kernels;
mod params;
pub mod rng;
mod scalar;
mod tape;
mod tensor;


use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use kernels::{axpy, dot};
pub use params::{BoundParams, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("shape {shape:?} does not hold {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}
