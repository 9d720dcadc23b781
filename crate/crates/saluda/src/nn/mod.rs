//! Neural-network substrate: tensors, parameter registry, a reverse-mode
//! tape, batch normalization state, AdamW, checkpoint serialization, and a
//! finite-difference gradient checker.

pub mod batchnorm;
pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use batchnorm::{BatchNormState, BnMode};
pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adamw_step, ema_update_bn, ema_update_params, LrSchedule, OptimizerState};
pub use params::ParamSet;
pub use tape::{softmax_rows, Csr, Grads, Tape, Var};
pub use tensor::Tensor;
