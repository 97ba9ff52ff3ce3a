//! Command-line layer for `bsqr`: file formats, configuration, rolling-window
//! tail betas and the subcommand drivers.

pub mod commands;
pub mod config;
pub mod data;
pub mod output;
pub mod rolling;

use bsqr::BsqrError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] BsqrError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for bad input or usage, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// `git describe` of the build, or the crate version outside a checkout.
pub const VERSION: &str = env!("BSQR_BUILD_VERSION");
