use thiserror::Error;

use crate::jpeg::JpegError;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid image geometry: {0}")]
    Geometry(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {message}")]
    Codec { path: String, message: String },
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;
