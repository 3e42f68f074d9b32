//! Std companion to `havens-core`: run configuration, the CG experiment
//! runner, the result CSV format, reporting and the `havens` command line.

pub mod cli;
pub mod config;
mod error;
pub mod experiment;
pub mod report;
pub mod results;
pub mod scrub_demo;
pub mod stats;

pub use error::{CliError, EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_RESOURCE};
