use lgseg_harness::HarnessError;
use lgseg_models::ModelError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 usage/config, 3 checkpoint, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Checkpoint(_) => 3,
            CliError::Harness(HarnessError::Divergence { .. }) => 4,
            _ => 1,
        }
    }
}

impl From<lgseg_tensor::TensorError> for CliError {
    fn from(e: lgseg_tensor::TensorError) -> Self {
        CliError::Model(e.into())
    }
}
