//! Minimal reverse-mode automatic differentiation.
//!
//! Only the layers the multi-stream network needs are provided: conv1d,
//! relu, max/avg pooling, linear, softmax, dropout and a weighted
//! binary cross-entropy, plus a few composition helpers.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{sigmoid, softplus, Graph, Var};
pub use tensor::Tensor;
