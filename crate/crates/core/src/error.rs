use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: {what} violates {bound}")]
    Range { what: String, bound: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("instance `{id}` has no tokens")]
    EmptyInstance { id: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{record}` position {position}: {message}")]
    Validation {
        record: String,
        position: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn range(what: impl Into<String>, bound: impl Into<String>) -> Self {
        Error::Range {
            what: what.into(),
            bound: bound.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
