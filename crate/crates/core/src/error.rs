use thiserror::Error;

use crate::compute::checkpoint::CheckpointError;
use crate::compute::ComputeError;
use crate::config::ConfigError;
use crate::dataio::DataError;

/// Crate-level error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures caused by non-finite numbers during training.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Compute(e) if e.is_numerical())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
