//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Only the primitives the partitioning network, the autoencoders and the
//! losses need are provided. Shapes must match exactly; the one broadcast is
//! a per-channel bias inside the convolution and linear ops.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
