//! Full-range BT.601 conversion between RGB and YCbCr.

use crate::image::quantize_level;

pub fn rgb_to_ycbcr(r: u8, g: u8, b: u8) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    [
        quantize_level(0.299 * r + 0.587 * g + 0.114 * b),
        quantize_level(-0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0),
        quantize_level(0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0),
    ]
}

pub fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [u8; 3] {
    ycbcr_to_rgb_f64(y as f64, cb as f64, cr as f64)
}

/// As [`ycbcr_to_rgb`] for interpolated (non-integer) samples.
pub fn ycbcr_to_rgb_f64(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    [
        quantize_level(y + 1.402 * cr),
        quantize_level(y - 0.344_136 * cb - 0.714_136 * cr),
        quantize_level(y + 1.772 * cb),
    ]
}
