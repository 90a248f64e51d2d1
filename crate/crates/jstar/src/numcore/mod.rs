//! Minimal dense-tensor numerics with reverse-mode automatic differentiation.
//!
//! Everything the model layers and the lattice loss need, and nothing more:
//! f32 storage, f64 reduction accumulators, exact-shape or scalar broadcasting
//! only, and a single-threaded tape whose replay is bit-deterministic.

mod adam;
mod graph;
mod params;
pub mod rng;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{matmul_bt_kernel, matmul_kernel, matmul_tn_kernel, Graph, NodeId};
pub use params::{ParamEntry, ParamId, ParamSet};
pub use rng::Rng;
pub use tensor::{log_softmax_row, sigmoid_f32, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty tensor passed to {op}")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("missing gradient for parameter '{0}'")]
    MissingGrad(String),
    #[error("duplicate parameter name '{0}'")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

#[cfg(test)]
mod tests;
