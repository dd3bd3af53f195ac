use thiserror::Error;

/// Errors raised by the simulation and analysis layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input violates its documented invariants; `field` names the offending input.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A closed form is not available for the requested combination.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("audit failed: {0}")]
    Audit(String),

    /// Analysis preconditions were not met (for example unverified hypotheses).
    #[error("refused: {0}")]
    Refused(String),

    #[error("inconclusive: {0}")]
    Inconclusive(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
