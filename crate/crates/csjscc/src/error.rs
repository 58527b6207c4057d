use std::io;
use std::path::PathBuf;

use crate::checkpoint::CheckpointError;
use crate::data::{CifarError, PpmError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: {source}", path.display())]
    Cifar { path: PathBuf, source: CifarError },

    #[error("{}: {source}", path.display())]
    Ppm { path: PathBuf, source: PpmError },

    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        source: CheckpointError,
    },

    #[error("{what} `{}` does not exist", path.display())]
    MissingPath { what: &'static str, path: PathBuf },

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] csjscc_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Errors caused by the operator's input rather than by a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::MissingPath { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
