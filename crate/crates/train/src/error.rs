use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no gradient recorded for parameter {0}")]
    MissingGrad(String),
    #[error("non-finite loss {loss} at iteration {iteration}{}", dump.as_ref().map(|p| format!("; batch written to {}", p.display())).unwrap_or_default())]
    NonFinite {
        iteration: u64,
        loss: f64,
        dump: Option<PathBuf>,
    },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] hstkit_model::ModelError),
    #[error(transparent)]
    Tensor(#[from] hstkit_tensor::TensorError),
    #[error(transparent)]
    Imaging(#[from] hstkit_imaging::ImagingError),
    #[error(transparent)]
    Metric(#[from] hstkit_metrics::MetricError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
