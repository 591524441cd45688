//! Semantic video transmission over simulated wireless channels.

pub mod channel;
pub mod data_io;
pub mod digital_baseline;
pub mod flow_matching;
pub mod metrics;
pub mod nn_core;
pub mod semantic_codec;
pub mod train_eval;
