//! Command-line driver: run configurations, snapshot files, POD and
//! time-series analyses, and convergence studies.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod snapshot;

pub use error::{CliError, CliResult};
