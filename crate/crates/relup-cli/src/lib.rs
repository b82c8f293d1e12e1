//! Command implementations behind the `relup` binary.
//!
//! Subcommands: `train` (10-fold cross-validation), `sweep` (alpha/beta/T
//! grid), `ablate` (loss-term arms on shared folds), `bench` (wall-clock
//! comparison against the plain backbone), `export-embeddings` (inference
//! path embeddings from a checkpoint), and `parse-check` (dataset
//! statistics). Configuration precedence is flags > config file > defaults.

pub mod args;
pub mod commands;
pub mod config;
pub mod summary;

use relup::data::DataError;
use relup::train::TrainError;

/// Errors sorted by the exit code they map to: 2 usage, 3 ingestion,
/// 4 numerical divergence, 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Ingestion(String),
    #[error("{0}")]
    Divergence(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::MissingFile(_) | DataError::Format { .. } | DataError::Io(_) => {
                CliError::Ingestion(e.to_string())
            }
            DataError::Config(_) | DataError::Parameter(_) | DataError::Contract(_) => {
                CliError::Usage(e.to_string())
            }
            DataError::Tensor(_) => CliError::Other(anyhow::anyhow!(e.to_string())),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Data(d) => d.into(),
            TrainError::Contract(msg) => CliError::Usage(msg),
            other => CliError::Other(anyhow::anyhow!(other.to_string())),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(anyhow::anyhow!(e))
    }
}
