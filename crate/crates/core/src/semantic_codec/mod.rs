//! Semantic encoder, channel coder and frame-prediction decoder.

mod config;
mod model;
mod modules;

use thiserror::Error;

pub use config::{default_t, ChannelPlan, ModelConfig};
pub use model::{
    from_complex, interpolate_sequence, select_frame, to_complex, ChannelCode, EncoderLatents, EncoderVars, Pass,
    Transceiver,
};
pub use modules::{AfModule, ConvStack, FeatureChoice, FeatureFusion, FusionVars, Gate, ResBlock, ResUNet};

use crate::channel::ChannelError;
use crate::data_io::DataError;
use crate::flow_matching::FlowError;
use crate::nn_core::NnError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("code carries {got} symbols, budget is {expected}")]
    BudgetMismatch { expected: usize, got: usize },
    #[error("received {got} symbols, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("incompatible parameters: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}
