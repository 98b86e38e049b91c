use lgseg_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input {got:?} is incompatible: {why}")]
    Input { got: Vec<usize>, why: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> ModelError {
    ModelError::Config(msg.into())
}

pub(crate) fn input_err(got: &[usize], why: impl Into<String>) -> ModelError {
    ModelError::Input {
        got: got.to_vec(),
        why: why.into(),
    }
}
