use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token index {index} out of range for vocabulary of size {size}")]
    TokenOutOfRange { index: u32, size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Diverged {
        epoch: usize,
        step: usize,
        message: String,
    },
    #[error("rejection sampling gave up after {0} draws; try a sparser world or a longer horizon")]
    RejectionExhausted(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
