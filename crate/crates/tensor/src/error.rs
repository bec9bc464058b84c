use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward was already run on this graph; build a fresh graph for the next step")]
    BackwardTwice,
    #[error("unknown variable id {0}")]
    UnknownVar(usize),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape(msg.into()))
}
