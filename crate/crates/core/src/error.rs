use thiserror::Error;

/// Failure categories shared by the whole pipeline.
///
/// `Config` covers anything that can be rejected before work starts,
/// `Usage` is a call that violates an operation's precondition, and
/// `Format` is a malformed or truncated artifact file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}

macro_rules! format_err {
    ($($arg:tt)*) => { $crate::error::Error::Format(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use format_err;
pub(crate) use usage_err;
