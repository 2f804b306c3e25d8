use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("cloud {index}: {reason}")]
    BadCloud { index: usize, reason: String },

    #[error("block {index} is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { index: usize, deviation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("need at least {needed} iterations with retained iterates, have {have}")]
    TooFewIterations { needed: usize, have: usize },

    #[error("point is not first-order critical: gradient norm {grad_norm:.3e} > {tolerance:.3e}")]
    NotFirstOrderCritical { grad_norm: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for failures of the numerical routines themselves (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::NotFirstOrderCritical { .. })
    }
}
