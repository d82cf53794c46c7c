//! Dense tensors, a recorded tape for reverse-mode gradients, Adam, and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, BlockReport, GradCheckReport};
pub use optim::{AdamConfig, OptimizerState};
pub use tape::{log_sigmoid, sigmoid, Mask, Tape, Var};
pub use tensor::Tensor;
