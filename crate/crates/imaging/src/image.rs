use crate::error::{ImagingError, Result};

/// Interleaved 8-bit image (row-major, channels last), 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

/// Unit-interval real → 8-bit sample: scale by 255, round half away from zero, clamp.
pub fn quantize_unit(v: f64) -> u8 {
    quantize_level(v * 255.0)
}

/// Real sample level → 8-bit: round half away from zero, clamp to [0, 255].
pub fn quantize_level(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::Geometry(format!("{width}x{height} has an empty axis")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::Geometry(format!("{channels} channels; only 1 or 3 are supported")));
        }
        if samples.len() != width * height * channels {
            return Err(ImagingError::Geometry(format!(
                "{width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    samples.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, samples)
    }

    /// Materializes real levels in `[0, 255]` (interleaved) as 8-bit samples.
    pub fn from_levels(width: usize, height: usize, channels: usize, levels: &[f64]) -> Result<Self> {
        Self::new(width, height, channels, levels.iter().map(|&v| quantize_level(v)).collect())
    }

    /// Materializes unit-interval reals (interleaved) as 8-bit samples.
    pub fn from_unit(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        Self::new(width, height, channels, values.iter().map(|&v| quantize_unit(v)).collect())
    }

    /// Materializes a planar `[C, H, W]` unit-interval buffer.
    pub fn from_planar_unit(width: usize, height: usize, channels: usize, planar: &[f64]) -> Result<Self> {
        if planar.len() != width * height * channels {
            return Err(ImagingError::Geometry("planar buffer size mismatch".into()));
        }
        Self::from_fn(width, height, channels, |x, y, c| quantize_unit(planar[(c * height + y) * width + x]))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    pub fn same_geometry(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Samples as unit-interval reals, interleaved.
    pub fn to_unit(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64 / 255.0).collect()
    }

    /// Samples as unit-interval reals in planar `[C, H, W]` order.
    pub fn to_planar_unit(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.samples.len()];
        let plane = self.width * self.height;
        for (i, px) in self.samples.chunks(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v as f64 / 255.0;
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(ImagingError::Geometry(format!(
                "crop {width}x{height}@({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * self.channels;
            samples.extend_from_slice(&self.samples[row..row + width * self.channels]);
        }
        Image::new(width, height, self.channels, samples)
    }

    /// Converts to three channels by replicating a gray plane.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let samples = self.samples.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            samples,
        }
    }
}
