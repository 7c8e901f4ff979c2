use thiserror::Error;

/// Errors produced by the estimation pipeline and its I/O surfaces.
#[derive(Debug, Error)]
pub enum HlmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// An applicability condition failed hard (as opposed to the soft
    /// warnings carried in `ConditionReport`).
    #[error("condition error: {0}")]
    Condition(String),
}

pub type Result<T> = std::result::Result<T, HlmError>;
