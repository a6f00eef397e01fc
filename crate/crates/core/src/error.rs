//! Crate-wide error type.

use std::path::PathBuf;

use crate::types::PolicyId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupted simulation state: {0}")]
    CorruptedState(String),

    #[error("simulation under policy {policy} exceeded event budget of {budget}")]
    RunawaySimulation { policy: PolicyId, budget: u64 },

    #[error("twin desynchronized from cluster: {0}")]
    Desync(String),

    #[error("invalid run command: {0}")]
    InvalidCommand(String),

    #[error("job {job_id} needs {requested} nodes but only {free} are free")]
    InsufficientNodes {
        job_id: String,
        requested: u32,
        free: u32,
    },

    #[error("jobs request more nodes than the cluster has: {0:?}")]
    OversizedJobs(Vec<String>),

    #[error("trace contains no usable jobs ({skipped} rows skipped)")]
    EmptyTrace { skipped: usize },

    #[error("stream is closed")]
    StreamClosed,

    #[error("malformed record: {0}")]
    Parse(String),

    #[error("authoritative snapshot rejected: {0}")]
    InconsistentSnapshot(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("run did not complete: {0}")]
    IncompleteRun(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
