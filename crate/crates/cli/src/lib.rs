//! Command implementations behind the `semcom` binary.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::{
    cmd_baseline, cmd_sweep, cmd_train, cmd_transmit, BaselineArgs, CliError, SweepArgs, TrainSummary, TransmitArgs,
    CHECKPOINT_FILE, LOSS_FILE,
};
pub use config::{parse_grid, ConfigError, RunConfig};

/// Name of the environment variable holding the fallback dataset root.
pub const DATA_DIR_VAR: &str = "SEMCOM_DATA_DIR";
