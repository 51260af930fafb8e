use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A configuration value violates its documented bounds.
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("class {class} has no labeled documents; label more seed documents before fitting")]
    MissingClass { class: usize },

    #[error("non-positive unnormalized mass in {what}")]
    NonPositiveMass { what: String },

    #[error("objective became non-finite at EM iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("unknown document `{0}`")]
    UnknownDocument(String),

    #[error("keyword conflict: {0}")]
    KeywordConflict(String),

    #[error("label rejected for `{doc_id}`: {reason}")]
    LabelRejected { doc_id: String, reason: String },

    #[error("infeasible subsample: {0}")]
    Infeasible(String),

    #[error("document id sets differ: {0}")]
    IdMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("session is stopped")]
    Stopped,

    #[error("session is {actual}, expected {expected}")]
    WrongPhase { expected: String, actual: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
