//! Error taxonomy shared by every module.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shapes are inconsistent with what the operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A scalar argument is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A structured object (teacher, partition, adjacency) failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// A configuration value is rejected before any computation starts.
    #[error("config error: {0}")]
    Config(String),
    /// A numeric abort during computation (divergence, non-finite values).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// A text artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
