use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{name} must be positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { name: String, min_eigenvalue: f64 },

    #[error("value {value} of input {index} lies outside [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("forward model failed at {location:?}: {reason}")]
    ModelFailure { location: Vec<f64>, reason: String },

    #[error("schema version mismatch for {kind}: found {found}, expected {expected}")]
    SchemaVersion {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration, as opposed
    /// to numerical failures during a run.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Singular(_) | Error::Numerical(_) | Error::ModelFailure { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
