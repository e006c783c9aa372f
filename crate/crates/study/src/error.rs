use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}:{line}: {reason}")]
    EventLog { path: PathBuf, line: usize, reason: String },
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("algorithm `{algorithm}` has {have} pairs, a session needs {need}")]
    InsufficientPairs { algorithm: String, have: usize, need: usize },
    #[error("participant already has a session for `{0}`")]
    DuplicateParticipant(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("trial {0} does not exist")]
    NoSuchTrial(usize),
    #[error("trial {requested} requested, next trial is {cursor}")]
    OutOfOrder { requested: usize, cursor: usize },
    #[error("trial {0} was already answered differently")]
    ConflictingChoice(usize),
    #[error("no completed sessions for `{0}`")]
    NoCompletedSessions(String),
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] chromalab_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}
