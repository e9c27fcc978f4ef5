use alloc::string::String;
use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Shapes or extents that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Non-finite or otherwise unusable numeric values.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A documented precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! num_err {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use contract_err;
pub(crate) use dim_err;
pub(crate) use num_err;
