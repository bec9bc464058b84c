//! Separable bicubic resampling with the a = -0.5 convolution kernel,
//! antialiased on downscale by stretching the kernel (MATLAB `imresize` style).

use crate::error::{ImagingError, Result};
use crate::image::Image;

/// Keys' cubic convolution kernel with a = -0.5.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Source taps and normalized weights feeding one output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub taps: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Per-output-position contributions along one axis.
///
/// Output sample `j` is centred at input coordinate `(j + 0.5)/s - 0.5`
/// with `s = out_len / in_len`; out-of-range taps are clamped to the edge.
pub fn contributions(in_len: usize, out_len: usize, antialias: bool) -> Vec<Contribution> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if antialias && scale < 1.0 { scale } else { 1.0 };
    let width = 4.0 / stretch;
    let taps_per = width.ceil() as usize + 2;
    (0..out_len)
        .map(|j| {
            let centre = (j as f64 + 0.5) / scale - 0.5;
            let first = (centre - width / 2.0).floor() as isize;
            let mut taps = Vec::with_capacity(taps_per);
            let mut weights = Vec::with_capacity(taps_per);
            for t in 0..taps_per as isize {
                let i = first + t;
                let w = stretch * cubic(stretch * (centre - i as f64));
                if w == 0.0 {
                    continue;
                }
                taps.push(i.clamp(0, in_len as isize - 1) as usize);
                weights.push(w);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            Contribution { taps, weights }
        })
        .collect()
}

/// Resamples a planar-or-interleaved real buffer; `stride_of(x, y)` style
/// addressing is avoided by operating on interleaved `[H, W, C]` data.
pub fn resize_levels(
    levels: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
    antialias: bool,
) -> Result<Vec<f64>> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::Argument(format!("target size {out_w}x{out_h} must be positive")));
    }
    if levels.len() != width * height * channels {
        return Err(ImagingError::Geometry("level buffer does not match geometry".into()));
    }
    // rows first, then columns
    let rows = contributions(height, out_h, antialias);
    let mut tmp = vec![0.0; out_h * width * channels];
    for (oy, contrib) in rows.iter().enumerate() {
        let dst = &mut tmp[oy * width * channels..(oy + 1) * width * channels];
        for (&iy, &w) in contrib.taps.iter().zip(&contrib.weights) {
            let src = &levels[iy * width * channels..(iy + 1) * width * channels];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let cols = contributions(width, out_w, antialias);
    let mut out = vec![0.0; out_h * out_w * channels];
    for oy in 0..out_h {
        let src = &tmp[oy * width * channels..(oy + 1) * width * channels];
        for (ox, contrib) in cols.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * channels..(oy * out_w + ox + 1) * channels];
            for (&ix, &w) in contrib.taps.iter().zip(&contrib.weights) {
                for c in 0..channels {
                    dst[c] += w * src[ix * channels + c];
                }
            }
        }
    }
    Ok(out)
}

/// Bicubic resize of an 8-bit image; arithmetic in 64-bit, rounded once at the end.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize, antialias: bool) -> Result<Image> {
    let levels: Vec<f64> = img.samples().iter().map(|&v| v as f64).collect();
    let out = resize_levels(&levels, img.width(), img.height(), img.channels(), out_w, out_h, antialias)?;
    Image::from_levels(out_w, out_h, img.channels(), &out)
}
