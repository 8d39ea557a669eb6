use thiserror::Error;

/// Errors raised by the library. Configuration problems are separated from
/// numerical failures so the CLI can map them to distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("constraint violation at step {step}, path {path}: pi = {value} is outside {set}")]
    ConstraintViolation {
        step: usize,
        path: usize,
        value: f64,
        set: String,
    },

    #[error("empty constraint set")]
    EmptyConstraint,

    #[error("non-compact constraint set {0} needs a truncation level")]
    NonCompact(String),

    #[error("truncation level {level} is below the admissible minimum M = {min}")]
    TruncationLevel { level: f64, min: f64 },

    #[error("nonpositive factor {value} at index {index} in positivity mode")]
    NonPositiveFactor { index: usize, value: f64 },

    #[error("regression failed at step {step}: {message}")]
    Regression { step: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::LengthMismatch { .. }
                | Error::EmptyConstraint
                | Error::NonCompact(_)
                | Error::TruncationLevel { .. }
                | Error::InvalidTree(_)
                | Error::Mismatch(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
