//! Dense `f64` matrices, reverse-mode differentiation and the Adam optimizer.

mod params;
mod sparse;
mod tape;
mod tensor;

pub use params::{AdamHyper, ParamId, ParamSet};
pub use sparse::SparseMatrix;
pub use tape::{log_sigmoid, sigmoid, softmax_in_place, Tape, Var};
pub use tensor::{cosine_sim, Tensor2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by node #{node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward requires a 1x1 root, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
}
