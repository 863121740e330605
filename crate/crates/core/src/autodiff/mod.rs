//! Minimal dense-array engine with reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use tape::{Gradients, Tape, Var, DEFAULT_NORM_FLOOR};
pub use tensor::Tensor;

pub(crate) use tape::dot;
