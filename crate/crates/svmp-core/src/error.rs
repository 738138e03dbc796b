use thiserror::Error;

/// Errors surfaced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("duplicate rating for user `{user}`, item `{item}`")]
    DuplicateRating { user: String, item: String },

    #[error("ratings input contains no records")]
    EmptyInput,

    #[error("child sample is empty")]
    EmptySample,

    #[error("sparsity pattern unsatisfiable after {retries} attempts")]
    PatternUnsatisfiable { retries: usize },

    #[error("factor has {children} children, enumeration supports at most {max}")]
    EnumerationBound { children: usize, max: usize },

    #[error("run log: {0}")]
    CsvLog(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("plot: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
