use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value is out of its valid domain.
    #[error("invalid input: {0}")]
    Validation(String),
    /// An operation would violate a state invariant (e.g. step regression).
    #[error("invalid state: {0}")]
    State(String),
    /// The configuration cannot be satisfied (e.g. dataset too small).
    #[error("configuration error: {0}")]
    Config(String),
    /// A snapshot file failed integrity or version checks.
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
