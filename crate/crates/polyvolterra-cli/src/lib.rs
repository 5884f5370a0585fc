//! Experiment harness for the `polyvolterra` library: TOML configs, method orchestration,
//! cross-method comparison and convergence studies, with CSV and JSON outputs.

pub mod commands;
pub mod config;
pub mod output;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("method failed: {0}")]
    Method(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Exit code 0 means every check passed.
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 1;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Method(_) => EXIT_FAIL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}
