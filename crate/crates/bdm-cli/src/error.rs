//! Command-line crate errors.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {details}")]
    Config { path: String, details: String },

    #[error("filtering failed: {0}")]
    Core(#[from] bdm_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
