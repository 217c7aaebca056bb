//! SwinLSTM: a recurrent cell that drives a simplified LSTM state update with
//! shifted-window self-attention, plus everything needed to train and
//! evaluate it on frame sequences.

pub mod cell;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod rng;
pub mod selfcheck;
pub mod swin;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{LossMode, Model, ModelConfig, NetworkState, ReconstructionMode, StateValues, Variant};
pub use params::{Graph, ParameterStore};
pub use tensor::{Scalar, Tape, Tensor, Var};
