use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter `{param}` at entry {entry:?}")]
    NonFiniteGradient { param: String, entry: (usize, usize) },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("parameter `{0}` was registered with a different optimizer state")]
    StateKind(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument { name, reason: reason.into() }
}
