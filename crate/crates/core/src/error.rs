use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow { path: PathBuf, line: usize, msg: String },

    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("id out of range: {what} id {id} >= {bound}")]
    IdOutOfRange { what: String, id: usize, bound: usize },

    #[error("duplicate node-type name `{0}`")]
    DuplicateNodeType(String),

    #[error("duplicate relation name `{0}`")]
    DuplicateRelation(String),

    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("split member {0} is unlabeled")]
    UnlabeledSplitMember(usize),

    #[error("incompatible metapath: {0}")]
    IncompatibleMetapath(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::MalformedRow {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Whether the error stems from caller-supplied arguments rather than from
    /// the data being processed.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}
