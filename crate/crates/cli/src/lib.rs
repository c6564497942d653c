//! Pipeline orchestration behind the `vagg` binary: configuration,
//! dataset handling, the cross-validation protocol, and single-volume
//! detection. The binary is a thin argument-parsing wrapper over
//! [`pipeline`].

use thiserror::Error;

pub mod config;
pub mod pipeline;

/// Process-level error classes; each maps to a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation or configuration (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Missing, malformed, or inconsistent data (exit 3).
    #[error("{0}")]
    Data(String),
    /// A solver or calibration failed to converge (exit 4).
    #[error("{0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
        }
    }
}
