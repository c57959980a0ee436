use thiserror::Error;

/// Errors raised while loading inputs or when an internal contract is broken.
///
/// Undefined compositions (overlapping nodes, interface mismatches) are not
/// errors; they are reported through `Option`/`Result` values of their own.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("key {0} is not on the endpoint grid")]
    OffGrid(String),
    #[error("too many finite endpoints: {0} (at most {max})", max = crate::keyspace::MAX_ENDPOINTS)]
    TooManyEndpoints(usize),
    #[error("endpoints must be strictly increasing")]
    UnsortedEndpoints,
    #[error("malformed input: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("flow iteration did not stabilise within {0} rounds")]
    MaxIterExceeded(usize),
    #[error("sequence is not ascending in the natural order at position {0}")]
    NotAscending(usize),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Input(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
