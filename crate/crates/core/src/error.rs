use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Operand dimensions do not agree.
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// An iterative decomposition hit its iteration cap.
    NoConvergence { iterations: usize },
    /// The active-set solver exceeded its iteration budget.
    ActiveSetCycle { iterations: usize },
    /// Non-finite values showed up where finite ones are required.
    NonFinite(&'static str),
    /// Malformed or out-of-range input data.
    InvalidInput(String),
    /// An operation was called in a state that does not support it.
    Usage(&'static str),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::ActiveSetCycle { .. } | Error::NonFinite(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::NoConvergence { iterations } => {
                write!(f, "svd did not converge after {iterations} sweeps")
            }
            Error::ActiveSetCycle { iterations } => {
                write!(f, "active-set solver cycled after {iterations} iterations")
            }
            Error::NonFinite(what) => write!(f, "non-finite values in {what}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
