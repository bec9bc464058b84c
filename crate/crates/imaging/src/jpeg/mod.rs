//! Baseline sequential JPEG (JFIF) codec.
//!
//! Colour images are coded as YCbCr 4:2:0 with the standard tables scaled by
//! quality; gray images as a single component. The decoder accepts any
//! baseline stream with up to three components and no restart intervals.

pub mod color;
pub mod dct;
mod decoder;
mod encoder;
pub mod huffman;
pub mod tables;

use thiserror::Error;

pub use decoder::decode;
pub use encoder::encode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JpegError {
    #[error("invalid JPEG quality {0}; expected 1..=100")]
    Quality(i64),
    #[error("malformed {segment} segment: {reason}")]
    Malformed { segment: &'static str, reason: String },
    #[error("JPEG stream truncated inside {segment}")]
    Truncated { segment: &'static str },
    #[error("unsupported JPEG feature in {segment}: {reason}")]
    Unsupported { segment: &'static str, reason: String },
}

impl JpegError {
    /// Name of the marker segment the error was raised in.
    pub fn segment(&self) -> Option<&'static str> {
        match self {
            JpegError::Quality(_) => None,
            JpegError::Malformed { segment, .. } | JpegError::Truncated { segment } | JpegError::Unsupported { segment, .. } => Some(segment),
        }
    }
}

/// Encode then decode at `quality`, the compression stage of the degradation.
pub fn roundtrip(img: &crate::Image, quality: u8) -> Result<crate::Image, JpegError> {
    decode(&encode(img, quality)?)
}
