use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("topology generation failed after {attempts} attempts: {assumption}")]
    Generation { attempts: usize, assumption: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite aggregate for client {client} in round {round} (seed {seed}); dump at {dump}")]
    NonFinite {
        seed: u64,
        round: usize,
        client: usize,
        dump: String,
    },

    #[error("seed {seed}, round {round}: {source}")]
    InRun {
        seed: u64,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for errors caused by a bad configuration rather than a runtime fault.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) => true,
            Error::InRun { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
