//! Experiment runner behind the `gpo` binary.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Preset, OUTPUT_DIR_VAR};
pub use run::{run_experiment, RunFailure, RunReport};
