//! The LR generation pipeline: bicubic downsampling, JPEG round trip, then
//! optional extra stages (blur, noise, re-compression, random hybrids).

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ImagingError, Result};
use crate::image::Image;
use crate::jpeg;
use crate::resize::bicubic_resize;

/// User-supplied degradation stage.
pub trait StagePlugin: Send + Sync {
    /// Stable identifier; part of the spec description used for provenance hashing.
    fn name(&self) -> String;
    fn apply(&self, img: &Image, rng: &mut ChaCha8Rng) -> Result<Image>;
}

#[derive(Clone)]
pub enum Stage {
    /// Gaussian blur with standard deviation in pixels.
    Blur { sigma: f64 },
    /// Additive Gaussian noise, standard deviation on the unit intensity scale.
    Noise { sigma: f64 },
    Jpeg { quality: u8 },
    /// Blur σ∈[0.2,3], noise σ∈[0,25/255] and JPEG Q∈[30,95], drawn per image
    /// and applied in a random order.
    RandomHybrid,
    Custom(Arc<dyn StagePlugin>),
}

impl fmt::Debug for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl Stage {
    pub fn describe(&self) -> String {
        match self {
            Stage::Blur { sigma } => format!("blur({sigma})"),
            Stage::Noise { sigma } => format!("noise({sigma})"),
            Stage::Jpeg { quality } => format!("jpeg({quality})"),
            Stage::RandomHybrid => "hybrid".into(),
            Stage::Custom(p) => format!("custom({})", p.name()),
        }
    }

    fn apply(&self, img: &Image, rng: &mut ChaCha8Rng) -> Result<Image> {
        match self {
            Stage::Blur { sigma } => gaussian_blur(img, *sigma),
            Stage::Noise { sigma } => add_noise(img, *sigma, rng),
            Stage::Jpeg { quality } => Ok(jpeg::roundtrip(img, *quality)?),
            Stage::RandomHybrid => {
                let blur = rng.random_range(0.2..=3.0);
                let noise = rng.random_range(0.0..=25.0 / 255.0);
                let q = rng.random_range(30..=95u8);
                let mut order = [0, 1, 2];
                order.shuffle(rng);
                let mut out = img.clone();
                for op in order {
                    out = match op {
                        0 => gaussian_blur(&out, blur)?,
                        1 => add_noise(&out, noise, rng)?,
                        _ => jpeg::roundtrip(&out, q)?,
                    };
                }
                Ok(out)
            }
            Stage::Custom(p) => p.apply(img, rng),
        }
    }
}

/// Recipe turning an HR image into its degraded LR counterpart.
#[derive(Clone, Debug)]
pub struct DegradationSpec {
    pub scale: usize,
    pub antialias: bool,
    pub jpeg_quality: Option<u8>,
    pub extra_stages: Vec<Stage>,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec::bicubic(4)
    }
}

impl DegradationSpec {
    /// Bicubic downsampling only.
    pub fn bicubic(scale: usize) -> Self {
        DegradationSpec {
            scale,
            antialias: true,
            jpeg_quality: None,
            extra_stages: Vec::new(),
        }
    }

    /// Bicubic downsampling followed by JPEG at `quality`.
    pub fn compressed(scale: usize, quality: u8) -> Self {
        DegradationSpec {
            jpeg_quality: Some(quality),
            ..Self::bicubic(scale)
        }
    }

    /// Bicubic downsampling followed by one random hybrid stage.
    pub fn hybrid(scale: usize) -> Self {
        DegradationSpec {
            extra_stages: vec![Stage::RandomHybrid],
            ..Self::bicubic(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(ImagingError::Argument("scale must be at least 1".into()));
        }
        let qualities = self.jpeg_quality.into_iter().chain(self.extra_stages.iter().filter_map(|s| match s {
            Stage::Jpeg { quality } => Some(*quality),
            _ => None,
        }));
        for q in qualities {
            if !(1..=100).contains(&q) {
                return Err(jpeg::JpegError::Quality(q as i64).into());
            }
        }
        for s in &self.extra_stages {
            match s {
                Stage::Blur { sigma } | Stage::Noise { sigma } if !(sigma.is_finite() && *sigma >= 0.0) => {
                    return Err(ImagingError::Argument(format!("stage {} needs a finite nonnegative sigma", s.describe())));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Canonical one-line description; equal specs describe identically.
    pub fn describe(&self) -> String {
        let stages: Vec<String> = self.extra_stages.iter().map(Stage::describe).collect();
        format!(
            "bicubic(scale={},antialias={});jpeg={};stages=[{}]",
            self.scale,
            self.antialias,
            self.jpeg_quality.map_or("none".to_string(), |q| q.to_string()),
            stages.join(",")
        )
    }
}

/// Degrades with seed 0; see [`degrade_seeded`].
pub fn degrade(hr: &Image, spec: &DegradationSpec) -> Result<Image> {
    degrade_seeded(hr, spec, 0)
}

/// Downsample, compress, then run the extra stages; random stages draw from `seed`.
pub fn degrade_seeded(hr: &Image, spec: &DegradationSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let s = spec.scale;
    if hr.width() % s != 0 || hr.height() % s != 0 {
        return Err(ImagingError::Geometry(format!(
            "{}x{} is not divisible by scale {s}; crop first",
            hr.width(),
            hr.height()
        )));
    }
    let mut img = if s == 1 {
        hr.clone()
    } else {
        bicubic_resize(hr, hr.height() / s, hr.width() / s, spec.antialias)?
    };
    if let Some(q) = spec.jpeg_quality {
        img = jpeg::roundtrip(&img, q)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for stage in &spec.extra_stages {
        img = stage.apply(&img, &mut rng)?;
    }
    Ok(img)
}

/// Separable Gaussian blur, radius ceil(3σ), edges clamped.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ImagingError::Argument(format!("blur sigma {sigma} must be finite and nonnegative")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src: Vec<f64> = img.samples().iter().map(|&v| v as f64).collect();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (k, &wt) in kernel.iter().enumerate() {
                        let d = k as isize - radius;
                        let (sx, sy) = if horizontal {
                            ((x as isize + d).clamp(0, w as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + d).clamp(0, h as isize - 1) as usize)
                        };
                        acc += wt * src[(sy * w + sx) * c + ch];
                    }
                    out[(y * w + x) * c + ch] = acc;
                }
            }
        }
        out
    };
    let tmp = pass(&src, true);
    Image::from_levels(w, h, c, &pass(&tmp, false))
}

/// Adds i.i.d. Gaussian noise (σ on the unit scale) and requantizes.
pub fn add_noise(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma * 255.0).map_err(|e| ImagingError::Argument(e.to_string()))?;
    let levels: Vec<f64> = img.samples().iter().map(|&v| v as f64 + normal.sample(rng)).collect();
    Image::from_levels(img.width(), img.height(), img.channels(), &levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| ((x * 7 + y * 3 + c * 40) % 256) as u8).unwrap()
    }

    #[test]
    fn scale_one_without_jpeg_is_identity() {
        let img = ramp(12, 9);
        let spec = DegradationSpec {
            scale: 1,
            antialias: true,
            jpeg_quality: None,
            extra_stages: vec![],
        };
        assert_eq!(degrade(&img, &spec).unwrap(), img);
    }

    #[test]
    fn geometry_and_divisibility() {
        let img = ramp(256, 256);
        let lr = degrade(&img, &DegradationSpec::compressed(4, 10)).unwrap();
        assert_eq!((lr.width(), lr.height()), (64, 64));
        assert!(degrade(&ramp(30, 32), &DegradationSpec::bicubic(4)).is_err());
        assert!(DegradationSpec::compressed(4, 0).validate().is_err());
        assert!(DegradationSpec::compressed(4, 101).validate().is_err());
        assert!(DegradationSpec { scale: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn descriptions_are_canonical() {
        let a = DegradationSpec::compressed(4, 10);
        assert_eq!(a.describe(), "bicubic(scale=4,antialias=true);jpeg=10;stages=[]");
        let b = DegradationSpec {
            extra_stages: vec![Stage::Blur { sigma: 1.5 }, Stage::RandomHybrid],
            ..DegradationSpec::bicubic(4)
        };
        assert_eq!(b.describe(), "bicubic(scale=4,antialias=true);jpeg=none;stages=[blur(1.5),hybrid]");
    }

    #[test]
    fn blur_preserves_constants_and_smooths() {
        let flat = Image::filled(10, 10, 3, 90).unwrap();
        assert_eq!(gaussian_blur(&flat, 2.0).unwrap(), flat);
        let checker = Image::from_fn(16, 16, 1, |x, y, _| if (x + y) % 2 == 0 { 255 } else { 0 }).unwrap();
        let blurred = gaussian_blur(&checker, 1.0).unwrap();
        for y in 4..12 {
            for x in 4..12 {
                assert!((120..=135).contains(&blurred.get(x, y, 0)));
            }
        }
    }

    #[test]
    fn seeded_stages_are_deterministic() {
        let img = ramp(64, 64);
        let spec = DegradationSpec::hybrid(4);
        let a = degrade_seeded(&img, &spec, 7).unwrap();
        assert_eq!(a, degrade_seeded(&img, &spec, 7).unwrap());
        assert_ne!(a, degrade_seeded(&img, &spec, 8).unwrap());
    }

    struct Invert;
    impl StagePlugin for Invert {
        fn name(&self) -> String {
            "invert".into()
        }
        fn apply(&self, img: &Image, _: &mut ChaCha8Rng) -> Result<Image> {
            Image::new(img.width(), img.height(), img.channels(), img.samples().iter().map(|v| 255 - v).collect())
        }
    }

    #[test]
    fn custom_plugins_run_in_order() {
        let img = ramp(8, 8);
        let spec = DegradationSpec {
            scale: 1,
            antialias: false,
            jpeg_quality: None,
            extra_stages: vec![Stage::Custom(Arc::new(Invert)), Stage::Custom(Arc::new(Invert))],
        };
        assert_eq!(degrade(&img, &spec).unwrap(), img);
        assert!(spec.describe().contains("custom(invert)"));
    }
}
