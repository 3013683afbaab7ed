use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, divisibility).
    #[error("contract violation: {0}")]
    Contract(String),
    /// NaN or infinity showed up in data, gradients or a loss.
    #[error("numeric fault: {0}")]
    NumericFault(String),
    /// The input is well-formed but cannot support the requested computation.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A provider could not answer (timeout, connection, repeated 5xx).
    /// The affected item stays pending and can be retried.
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    /// A provider answered with a payload that violates the wire schema.
    #[error("provider schema violation: {0}")]
    ProviderSchema(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(alloc::format!($($arg)+)));
        }
    };
}

pub(crate) use contract;
