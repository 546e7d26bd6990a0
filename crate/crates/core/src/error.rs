use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::VehicleType;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("{vehicle:?}: d = {d} outside path range [{min}, {max}]")]
    OffPath {
        vehicle: VehicleType,
        d: f64,
        min: f64,
        max: f64,
    },

    #[error("step called on a terminated episode")]
    EpisodeDone,

    #[error("action has {got} entries, expected {expected}")]
    ActionShape { expected: usize, got: usize },

    #[error("non-finite input to network")]
    NonFiniteInput,

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),

    #[error("non-finite probability ratio at sample {index} (log-ratio {log_ratio})")]
    NonFiniteRatio { index: usize, log_ratio: f64 },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
