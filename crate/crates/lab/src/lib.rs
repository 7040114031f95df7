//! Experiment orchestration for the mfgc laboratory: configuration files,
//! the registered experiments and their report bundles.

pub mod config;
pub mod experiments;

pub use config::{ConfigError, ExperimentConfig, LabConfig};
pub use experiments::{run_experiment, write_outcome, Check, LabError, Outcome};
