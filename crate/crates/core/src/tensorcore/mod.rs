//! Dense `f64` tensors, a reverse-mode tape over matrix operations, the Adam
//! update rule, finite-difference gradient checking and named-tensor
//! checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport, FD_STEP};
pub use tape::{ParamSet, Tape, Var};
pub use tensor::{elu, leaky_relu, relu, sigmoid, Tensor};
