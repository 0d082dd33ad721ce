//! Dense `f64` tensors, tape-based reverse-mode differentiation and a
//! finite-difference gradient checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_against, Extended, GradCheck, NamedTensors, ParamSet};
pub use tape::{Elementwise, ParamGrad, ReduceOp, Tape, Var};
pub use tensor::Tensor;
