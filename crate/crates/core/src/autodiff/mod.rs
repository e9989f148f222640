//! Minimal reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
