use alloc::string::String;

/// Errors raised by the pure computational layer.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Raised by a training sink (metrics/checkpoint writer) and passed through.
    #[error("{0}")]
    Sink(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::Error::Config(alloc::format!($($arg)*))
    };
}

pub(crate) use {config_err, invalid};
