//! Dense tensors, reverse-mode differentiation and gradient checking.

mod graph;
pub mod gradcheck;
mod tensor;
mod double;

pub use graph::{Dropout, Gradients, Graph, NodeId};
pub use double::DoubleF64;
pub use tensor::{Scalar, Tensor};
