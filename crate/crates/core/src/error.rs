use std::path::PathBuf;

use crate::protocol::AgentId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("incomplete assignment: agent {0} has no value")]
    IncompleteAssignment(AgentId),

    #[error("script line {line}: {message}")]
    ScriptSyntax { line: usize, message: String },

    #[error("event {index} at t={at}: {message}")]
    ScriptViolation {
        index: usize,
        at: f64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
