//! Config-driven front end around `krom-core`: collect snapshot data, fit
//! models, compare predictions, run closed loops and time model steps.
//!
//! Commands communicate only through files below the configured output
//! directory: `data/`, `models/`, `predict/`, `mpc/`, `fit_report.json` and
//! `bench.json`.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{load, ExperimentConfig};
pub use error::{CliError, CliResult};
