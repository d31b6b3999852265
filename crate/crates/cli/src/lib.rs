//! Command-line front end of `mobl`: run configs, preference sweeps and the
//! verification suite, with CSV traces and JSON run records as output.

pub mod commands;
pub mod config;
mod error;
pub mod trace_io;

pub use error::{CliError, CliResult, ConfigError, EXIT_CONFIG, EXIT_RUNTIME};
