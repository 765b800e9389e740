//! Tensor engine with reverse-mode automatic differentiation.

mod graph;
pub mod kernels;
mod penalty;

pub use graph::{Gradients, Tape, Var};
pub use penalty::gradient_penalty;
