//! Two-phase (teacher-forced warm-up, then autoregressive rollout)
//! training, Adam, and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, SWLS_MAGIC, SWLS_VERSION};
pub use loss::{loss, loss_value};
pub use trainer::{
    build_loss, evaluate, train_step, warmup_state, LogRow, LossGraph, TrainConfig, Trainer, LOG_HEADER,
};
