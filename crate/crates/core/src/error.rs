use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A problem field violates one of its invariants.
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("dimension mismatch for `{what}`: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: String,
        found: String,
    },

    /// A matrix that must be positive definite was not, at the given stage.
    #[error("{what} lost positive definiteness at stage {stage}: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite {
        what: &'static str,
        stage: usize,
        min_eigenvalue: f64,
    },

    #[error("horizon N = {horizon} needs {required} dynamic-programming terms, above the limit of {limit}")]
    TermGuard {
        horizon: usize,
        required: u128,
        limit: u128,
    },

    #[error("horizon N = {horizon} exceeds the oracle cap of {cap}")]
    HorizonTooLarge { horizon: usize, cap: usize },

    #[error("index {index} out of range for horizon {horizon}")]
    OutOfRange { index: usize, horizon: usize },

    #[error("{0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
