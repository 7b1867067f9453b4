use thiserror::Error;

/// Failure categories surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("abscissa {value} lies outside the domain [{lower}, {upper}]")]
    OutOfDomain { value: f64, lower: f64, upper: f64 },

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid data: {0}")]
    DataValidation(String),

    #[error("schema error: missing column \"{column}\"")]
    Schema { column: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate abscissa t={t} for subject \"{subject}\"")]
    DuplicateAbscissa { subject: String, t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numerical => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Data => "data",
            ErrorCategory::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidDimension(_) | Error::InvalidDomain(_) | Error::InvalidConfig(_) => {
                ErrorCategory::Usage
            }
            Error::RankDeficient(_) | Error::NumericalFailure(_) => ErrorCategory::Numerical,
            Error::OutOfDomain { .. }
            | Error::DataValidation(_)
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::DuplicateAbscissa { .. }
            | Error::Io(_)
            | Error::Json(_) => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
