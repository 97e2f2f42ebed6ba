use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration; exit code 2.
    #[error("{0}")]
    Config(String),

    /// A required setting is absent; printed with the subcommand usage, exit code 2.
    #[error("missing required setting {0}")]
    Missing(String),

    #[error(transparent)]
    Core(#[from] rawforge::Error),

    /// Work ran but produced no usable result; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) | CliError::Missing(_) => ExitCode::from(2),
            CliError::Core(e) if e.is_config() => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Unwraps a required setting.
pub fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Missing(format!("--{flag}")))
}
