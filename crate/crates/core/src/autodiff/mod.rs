//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
mod sgd;
mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Mode, Var, BN_EPSILON};
pub use sgd::{SgdConfig, SgdState};
pub use tensor::Tensor;
