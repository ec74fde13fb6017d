use alloc::string::String;

use crate::volume::Shape3;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, got {found:?}")]
    Dimension {
        context: &'static str,
        expected: Shape3,
        found: Shape3,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("numerical instability at step {step} (t = {time}): {detail}")]
    NumericalInstability {
        step: usize,
        time: f64,
        detail: String,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}

/// Returns a dimension error unless `found == expected`.
pub(crate) fn check_shape(context: &'static str, expected: Shape3, found: Shape3) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
