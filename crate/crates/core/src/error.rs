use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("unknown query `{0}`")]
    UnknownQuery(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid prompt catalog: {0}")]
    Catalog(String),

    #[error("index format: {0}")]
    IndexFormat(String),

    #[error("no evaluable queries")]
    NoEvaluableQueries,

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// True when the failure came from a likelihood provider rather than from input data.
    pub fn is_provider(&self) -> bool {
        matches!(self, Error::Provider(_))
    }
}

/// Failure talking to a likelihood provider.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("provider rejected request: {0}")]
    Request(String),
}
