//! Experiment driver: TOML configs, training runs, lambda sweeps and
//! checkpoint evaluation on top of `calibra`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_evaluate, cmd_sweep, cmd_train, run_training, EvalSplit, EvaluateOptions};
pub use config::{DatasetSource, ExperimentConfig, ModelConfig};
pub use error::{CliError, Result};
