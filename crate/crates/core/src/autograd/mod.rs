//! Dense `f64` tensors with define-by-run reverse-mode differentiation.

pub mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
