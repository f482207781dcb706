use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("non-finite training cost at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteCost {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
