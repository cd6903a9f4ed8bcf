//! Dense f64 tensors and a tape-based reverse-mode differentiator.
//!
//! Everything is 2-D at heart: a tensor with shape `[.., c]` is viewed as a
//! matrix of `product(..)` rows by `c` columns. Every op checks its result
//! for NaN/Inf and fails instead of propagating non-finite values.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("attention row {row} has no allowed entry")]
    FullyMasked { row: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("cross-entropy has no included targets")]
    EmptyTargets,
}
