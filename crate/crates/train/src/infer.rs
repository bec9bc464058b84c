//! Single-pass and self-ensemble inference, and dataset evaluation.

use hstkit_imaging::{degrade_seeded, DegradationSpec, Dihedral, Image};
use hstkit_metrics::{mean_finite, psnr_rgb, ssim};
use hstkit_model::{predict, HSTConfig, ParamStore};
use hstkit_tensor::{Real, Tensor};

use crate::data::{image_to_tensor, tensor_to_image};
use crate::error::{Result, TrainError};

/// Anything mapping a `[1, C, H, W]` unit-scale tensor to its upscaled counterpart.
pub trait Upscaler {
    fn upscale(&self, lr: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl<F> Upscaler for F
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    fn upscale(&self, lr: &Tensor<f64>) -> Result<Tensor<f64>> {
        self(lr)
    }
}

/// An HST network evaluated in precision `T`.
#[derive(Clone, Debug)]
pub struct HstModel<T: Real = f32> {
    pub config: HSTConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Upscaler for HstModel<T> {
    fn upscale(&self, lr: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(predict(&self.config, &self.params, &lr.cast())?.cast())
    }
}

fn run_rgb(model: &dyn Upscaler, lr: &Image) -> Result<Tensor<f64>> {
    let out = model.upscale(&image_to_tensor(&lr.to_rgb()))?;
    if out.shape().len() != 4 || out.shape()[0] != 1 {
        return Err(TrainError::Config(format!("model returned shape {:?}", out.shape())));
    }
    Ok(out)
}

/// Single forward pass, quantized.
pub fn infer(model: &dyn Upscaler, lr: &Image) -> Result<Image> {
    tensor_to_image(&run_rgb(model, lr)?)
}

/// Mean of the eight transformed-forward-inverted outputs, before quantization.
pub fn self_ensemble_planar(model: &dyn Upscaler, lr: &Image) -> Result<Tensor<f64>> {
    let lr = lr.to_rgb();
    let mut acc: Option<(Vec<f64>, Vec<usize>)> = None;
    for t in Dihedral::all() {
        let out = run_rgb(model, &t.apply(&lr))?;
        let (c, h, w) = (out.shape()[1], out.shape()[2], out.shape()[3]);
        let (back, bh, bw) = t.inverse().apply_planar(out.data(), c, h, w);
        match &mut acc {
            None => acc = Some((back, vec![1, c, bh, bw])),
            Some((sum, shape)) => {
                if shape[..] != [1, c, bh, bw] {
                    return Err(TrainError::Config(format!(
                        "model is not shape-equivariant: {shape:?} vs {:?}",
                        [1, c, bh, bw]
                    )));
                }
                sum.iter_mut().zip(back).for_each(|(s, v)| *s += v);
            }
        }
    }
    let (sum, shape) = acc.expect("eight transforms");
    Ok(Tensor::new(shape, sum.into_iter().map(|v| v / 8.0).collect())?)
}

/// Geometric self-ensemble over the eight dihedral transforms, quantized once.
pub fn self_ensemble_infer(model: &dyn Upscaler, lr: &Image) -> Result<Image> {
    tensor_to_image(&self_ensemble_planar(model, lr)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Sorted by name.
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
        let psnr: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        let ssim: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
        EvalReport {
            mean_psnr: mean_finite(&psnr),
            mean_ssim: mean_finite(&ssim),
            rows,
        }
    }

    /// Tab-separated table with a trailing mean row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("image\tpsnr\tssim\n");
        for r in &self.rows {
            out += &format!("{}\t{:.4}\t{:.6}\n", r.name, r.psnr, r.ssim);
        }
        out += &format!("mean\t{:.4}\t{:.6}\n", self.mean_psnr, self.mean_ssim);
        out
    }
}

/// Scores the model on already-degraded `(name, lr, hr)` triples.
pub fn score_pairs<'a>(
    model: &dyn Upscaler,
    pairs: impl IntoIterator<Item = (&'a str, &'a Image, &'a Image)>,
    ensemble: bool,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (name, lr, hr) in pairs {
        let sr = if ensemble { self_ensemble_infer(model, lr)? } else { infer(model, lr)? };
        let hr = hr.to_rgb();
        if !sr.same_geometry(&hr) {
            return Err(TrainError::Dataset(format!(
                "{name}: output {}x{} does not match HR {}x{}",
                sr.width(),
                sr.height(),
                hr.width(),
                hr.height()
            )));
        }
        rows.push(EvalRow {
            name: name.to_string(),
            psnr: psnr_rgb(&sr, &hr)?,
            ssim: ssim(&sr, &hr)?,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

/// Degrades each HR image with `spec` (after cropping to a multiple of the
/// scale), super-resolves and scores it.
pub fn evaluate(model: &dyn Upscaler, hr_images: &[(String, Image)], spec: &DegradationSpec, ensemble: bool, seed: u64) -> Result<EvalReport> {
    let s = spec.scale;
    let mut triples = Vec::with_capacity(hr_images.len());
    for (i, (name, img)) in hr_images.iter().enumerate() {
        let hr = img.to_rgb().crop(0, 0, img.width() / s * s, img.height() / s * s)?;
        let lr = degrade_seeded(&hr, spec, seed.wrapping_add(i as u64))?;
        triples.push((name.as_str(), lr, hr));
    }
    score_pairs(model, triples.iter().map(|(n, l, h)| (*n, l, h)), ensemble)
}
