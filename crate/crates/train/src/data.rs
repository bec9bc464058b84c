//! Aligned LR/HR pairs, patch sampling and image ↔ tensor conversion.

use std::sync::atomic::{AtomicBool, Ordering};

use hstkit_imaging::{degrade_seeded, DegradationSpec, Dihedral, Image};
use hstkit_tensor::{Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TrainError};

/// `[1, C, H, W]` tensor on the unit intensity scale.
pub fn image_to_tensor<T: Real>(img: &Image) -> Tensor<T> {
    let data = img.to_planar_unit().into_iter().map(T::from_f64).collect();
    Tensor::new(vec![1, img.channels(), img.height(), img.width()], data).expect("geometry matches samples")
}

/// Quantizes a `[1, C, H, W]` unit-scale tensor (clamped) to an 8-bit image.
pub fn tensor_to_image<T: Real>(t: &Tensor<T>) -> Result<Image> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(TrainError::Config(format!("expected a [1, C, H, W] tensor, got {s:?}")));
    }
    let planar: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
    Ok(Image::from_planar_unit(s[3], s[2], s[1], &planar)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub lr: Image,
    pub hr: Image,
}

/// Training or validation pairs generated offline with one degradation.
#[derive(Debug)]
pub struct PairDataset {
    pairs: Vec<Pair>,
    scale: usize,
    description: String,
    warned: AtomicBool,
}

impl PairDataset {
    /// Wraps precomputed pairs; every HR must be exactly `scale` times its LR.
    pub fn from_pairs(pairs: Vec<Pair>, scale: usize, description: impl Into<String>) -> Result<Self> {
        for p in &pairs {
            if p.hr.width() != scale * p.lr.width() || p.hr.height() != scale * p.lr.height() {
                return Err(TrainError::Dataset(format!(
                    "{}: HR {}x{} is not {scale}x LR {}x{}",
                    p.name,
                    p.hr.width(),
                    p.hr.height(),
                    p.lr.width(),
                    p.lr.height()
                )));
            }
        }
        Ok(PairDataset {
            pairs,
            scale,
            description: description.into(),
            warned: AtomicBool::new(false),
        })
    }

    /// Degrades each HR image (cropped to a multiple of the scale, converted
    /// to RGB); image `i` draws its random stages from `seed + i`.
    pub fn degrade(hr: Vec<(String, Image)>, spec: &DegradationSpec, seed: u64) -> Result<Self> {
        let s = spec.scale;
        let mut pairs = Vec::with_capacity(hr.len());
        for (i, (name, img)) in hr.into_iter().enumerate() {
            let (w, h) = (img.width() / s * s, img.height() / s * s);
            if w == 0 || h == 0 {
                log::warn!("{name}: {}x{} is smaller than the scale factor, skipped", img.width(), img.height());
                continue;
            }
            let hr = img.to_rgb().crop(0, 0, w, h)?;
            let lr = degrade_seeded(&hr, spec, seed.wrapping_add(i as u64))?;
            pairs.push(Pair { name, lr, hr });
        }
        Self::from_pairs(pairs, s, spec.describe())
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// Description of the degradation that produced the LR side.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// The first `n` pairs, for a fixed validation subset.
    pub fn head(&self, n: usize) -> &[Pair] {
        &self.pairs[..n.min(self.pairs.len())]
    }
}

/// Where one batch element came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleInfo {
    pub pair: usize,
    /// LR crop origin.
    pub x: usize,
    pub y: usize,
    pub transform: Dihedral,
}

#[derive(Clone, Debug)]
pub struct Batch<T: Real> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub samples: Vec<SampleInfo>,
}

/// Draws `batch_size` aligned crops: an LR `patch`² window and the HR window
/// at `scale`× its coordinates, both under the same random dihedral transform
/// when `augment` is set. Pairs smaller than the patch are skipped.
pub fn sample_batch<T: Real>(
    data: &PairDataset,
    batch_size: usize,
    patch: usize,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Batch<T>> {
    let eligible: Vec<usize> = (0..data.len())
        .filter(|&i| data.pairs[i].lr.width() >= patch && data.pairs[i].lr.height() >= patch)
        .collect();
    if eligible.len() < data.len() && !data.warned.swap(true, Ordering::Relaxed) {
        log::warn!("{} of {} images are smaller than the {patch}px patch and are skipped", data.len() - eligible.len(), data.len());
    }
    if eligible.is_empty() {
        return Err(TrainError::Dataset(format!("no image is at least {patch}x{patch} at LR")));
    }
    let s = data.scale;
    let hp = patch * s;
    let mut lr = Vec::with_capacity(batch_size * 3 * patch * patch);
    let mut hr = Vec::with_capacity(batch_size * 3 * hp * hp);
    let mut samples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let pair = eligible[rng.random_range(0..eligible.len())];
        let p = &data.pairs[pair];
        let x = rng.random_range(0..=p.lr.width() - patch);
        let y = rng.random_range(0..=p.lr.height() - patch);
        let transform = if augment { Dihedral::new(rng.random_range(0..8u8)) } else { Dihedral::IDENTITY };
        let lc = transform.apply(&p.lr.to_rgb().crop(x, y, patch, patch)?);
        let hc = transform.apply(&p.hr.to_rgb().crop(s * x, s * y, hp, hp)?);
        lr.extend(lc.to_planar_unit().into_iter().map(T::from_f64));
        hr.extend(hc.to_planar_unit().into_iter().map(T::from_f64));
        samples.push(SampleInfo { pair, x, y, transform });
    }
    Ok(Batch {
        lr: Tensor::new(vec![batch_size, 3, patch, patch], lr)?,
        hr: Tensor::new(vec![batch_size, 3, hp, hp], hr)?,
        samples,
    })
}
