use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the estimators, model operations and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("ragged input: row {row} has {found} fields, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The model (or an intermediate matrix) is not positive definite.
    #[error("not positive definite: {0}")]
    Indefinite(String),

    #[error("dense materialization refused: n = {n} exceeds guard {guard}")]
    DenseGuard { n: usize, guard: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) | Error::DenseGuard { .. } => ErrorClass::Usage,
            Error::Indefinite(_) => ErrorClass::Numeric,
            Error::Parse { .. }
            | Error::Ragged { .. }
            | Error::NonFinite { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidModel(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be a positive finite number, got {value}")))
    }
}
