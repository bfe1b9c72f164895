//! Experiment runner for the `fastslow` toolkit: config parsing, the
//! subcommands and the acceptance checks behind `verify`.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use config::{ExperimentConfig, System};
