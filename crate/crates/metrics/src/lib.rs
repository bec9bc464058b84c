//! Training objectives and image-quality metrics.
//!
//! Losses are thin wrappers over the fused graph op so they differentiate;
//! PSNR and SSIM score 8-bit images on all channels without border cropping.

mod loss;
mod quality;

pub use loss::{charbonnier_loss, l1_loss, loss_value, mse_loss, LossConfig, LossName, DEFAULT_CHARBONNIER_EPS};
pub use quality::{mean_finite, psnr_rgb, ssim, SSIM_WINDOW};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("image geometry differs: {0}")]
    Geometry(String),
    #[error("images too small for SSIM: {0}")]
    TooSmall(String),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] hstkit_tensor::TensorError),
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;
