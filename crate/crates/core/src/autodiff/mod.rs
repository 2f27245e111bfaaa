//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! One [`Tape`] is built per forward pass and dropped after its gradients
//! are read. Only first derivatives are supported.

mod params;
mod tape;
mod tensor;

pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
