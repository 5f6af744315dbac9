use std::path::PathBuf;

use thiserror::Error;

use crate::augment::AugmentError;
use crate::checkpoint::CheckpointError;
use crate::controller::{ControllerError, HistoryParseError};
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::loss::LossError;
use crate::model::ModelError;
use crate::optim::OptimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error; every variant maps to a documented process exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("{path}: {source}")]
    History {
        path: PathBuf,
        #[source]
        source: HistoryParseError,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Training(ControllerError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    pub const EXIT_IO: i32 = 8;
    pub const EXIT_PARSE: i32 = 3;
    pub const EXIT_CONFIG: i32 = 4;
    pub const EXIT_DIVERGENCE: i32 = 5;
    pub const EXIT_ADAPTER_UNAVAILABLE: i32 = 6;
    pub const EXIT_INPUT: i32 = 7;
    pub const EXIT_OTHER: i32 = 1;

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => Self::EXIT_IO,
            Error::Parse {
                source: DatasetError::ManifestMismatch(_),
                ..
            } => Self::EXIT_INPUT,
            Error::Parse { .. } | Error::History { .. } => Self::EXIT_PARSE,
            Error::Config(_) => Self::EXIT_CONFIG,
            Error::Input(_) | Error::Eval(_) => Self::EXIT_INPUT,
            Error::Training(ControllerError::Divergence { .. }) => Self::EXIT_DIVERGENCE,
            Error::Training(ControllerError::Config(_)) => Self::EXIT_CONFIG,
            Error::Training(ControllerError::Model(ModelError::AdapterUnavailable(_)))
            | Error::Model(ModelError::AdapterUnavailable(_)) => Self::EXIT_ADAPTER_UNAVAILABLE,
            Error::Training(_) | Error::Model(_) => Self::EXIT_OTHER,
        }
    }
}

impl From<ControllerError> for Error {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Model(m) => Error::Model(m),
            ControllerError::Optim(o) => Error::Config(o.to_string()),
            other => Error::Training(other),
        }
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        Error::Model(e)
    }
}

impl From<AugmentError> for Error {
    fn from(e: AugmentError) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<LossError> for Error {
    fn from(e: LossError) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<OptimError> for Error {
    fn from(e: OptimError) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<CheckpointError> for Error {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(ModelError::AdapterUnavailable(m)) => {
                Error::Model(ModelError::AdapterUnavailable(m))
            }
            other => Error::Input(format!("checkpoint: {other}")),
        }
    }
}
