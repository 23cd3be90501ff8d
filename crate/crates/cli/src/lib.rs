//! Experiment driver: config parsing, sweeps, and the subcommands behind
//! the `active` binary.

pub mod commands;
pub mod config;
pub mod runner;

pub use config::{DataSource, ExperimentConfig};
pub use runner::{run_experiment, ExperimentResult, RunMetrics, RunRecord};
