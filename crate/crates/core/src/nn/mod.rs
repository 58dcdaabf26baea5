//! Minimal tensor and reverse-mode differentiation machinery for the
//! coupled network.

mod conv;
mod graph;
mod tensor;

pub use graph::{sigmoid, Graph, Var};
pub use tensor::Tensor;
