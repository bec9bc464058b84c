use hstkit_imaging::Image;

use crate::{MetricError, Result};

/// Side length of the SSIM Gaussian window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_geometry(a: &Image, b: &Image) -> Result<()> {
    if !a.same_geometry(b) {
        return Err(MetricError::Geometry(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// PSNR in dB over every sample; identical images give `f64::INFINITY`.
pub fn psnr_rgb(a: &Image, b: &Image) -> Result<f64> {
    check_geometry(a, b)?;
    let sse: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.samples().len() as f64;
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Arithmetic mean; infinite entries (perfect reconstructions) propagate.
pub fn mean_finite(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-region filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &wt)| wt * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &wt)| wt * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM (11×11 Gaussian, σ = 1.5), averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_geometry(a, b)?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall(format!("{w}x{h}; both extents must be at least {SSIM_WINDOW}")));
    }
    let k = gaussian_window();
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let plane = |img: &Image, ch: usize| -> Vec<f64> { img.samples().iter().skip(ch).step_by(c).map(|&v| v as f64).collect() };
    let product = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let mut total = 0.0;
    for ch in 0..c {
        let (pa, pb) = (plane(a, ch), plane(b, ch));
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let e_aa = filter_valid(&product(&pa, &pa), w, h, &k);
        let e_bb = filter_valid(&product(&pb, &pb), w, h, &k);
        let e_ab = filter_valid(&product(&pa, &pb), w, h, &k);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}
