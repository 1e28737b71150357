use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("vocabulary error: token {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("initialization error: {0}")]
    Init(String),
    #[error("search space too large: {0} paths")]
    SearchSpace(u128),
    #[error("non-finite {component} loss at step {step}")]
    NonFinite { component: String, step: u64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
