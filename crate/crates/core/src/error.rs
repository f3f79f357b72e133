use thiserror::Error;

pub type Result<T> = std::result::Result<T, RrtError>;

#[derive(Debug, Error)]
pub enum RrtError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The confidence interval could not be bracketed within the search
    /// limit. Whichever endpoint was found is carried along.
    #[error("unbounded interval: lower={lower:?}, upper={upper:?}")]
    UnboundedInterval {
        lower: Option<f64>,
        upper: Option<f64>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
