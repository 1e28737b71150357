use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad command line or configuration; exit status 2.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] s2ut_core::Error),
    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn format_err(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), line, msg: msg.into() }
}
