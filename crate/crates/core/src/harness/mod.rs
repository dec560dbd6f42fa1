//! Experiment configs, execution and reports.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{parse_config, parse_config_for, Experiment, ExperimentConfig};
pub use experiments::{run_experiment, RunArtifacts};
pub use report::{Check, RunReport};
