use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid task spec: {0}")]
    InvalidTask(String),

    #[error("no layout with a reachable goal for task {task} after {attempts} attempts")]
    UnreachableGoal { task: String, attempts: u32 },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: &'static str },

    #[error("{what} version {found} is not supported (expected {expected})")]
    VersionMismatch { what: &'static str, found: u32, expected: u32 },

    #[error("{what} is truncated")]
    Truncated { what: &'static str },

    #[error("{what} checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { what: &'static str, stored: u32, computed: u32 },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
