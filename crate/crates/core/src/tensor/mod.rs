//! Reverse-mode automatic differentiation over dense `f64` tensors, with
//! gradients that are themselves differentiable.

mod array;
mod error;
mod grad;
mod ops;
mod tape;

pub use array::{broadcast_shape, Array};
pub use error::{Result, TensorError};
pub use grad::{backward, finite_diff_gradient, GradMap};
pub use tape::{checked_mode, set_checked_mode, NodeId, Tape, Tensor};
