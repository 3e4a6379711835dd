//! Tensors, the gradient tape, Adam and the learning-rate schedule.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, lr_at_epoch, AdamState, LrSchedule};
pub use tape::{Gradients, Indices, Tape, Var};
pub use tensor::Tensor;
