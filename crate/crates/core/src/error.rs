use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
///
/// Variants are split by failure class so the CLI can map them onto exit
/// codes: everything except [`Error::Numerical`] is a validation error.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("{module}: invalid parameter `{param}`: {reason}")]
    InvalidParameter {
        module: &'static str,
        param: &'static str,
        reason: String,
    },

    #[error("{module}: {reason}")]
    Numerical { module: &'static str, reason: String },

    #[error("{module}: {reason}")]
    Unsupported { module: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(module: &'static str, param: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            module,
            param,
            reason: reason.into(),
        }
    }

    pub(crate) fn numerical(module: &'static str, reason: impl Into<String>) -> Self {
        Error::Numerical {
            module,
            reason: reason.into(),
        }
    }

    pub(crate) fn unsupported(module: &'static str, reason: impl Into<String>) -> Self {
        Error::Unsupported {
            module,
            reason: reason.into(),
        }
    }

    /// True for numerical-guard failures (step-size guard, quadrature
    /// convergence, oracle mismatch).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
