//! PNG (and other raster) file I/O through the `image` crate.

use std::path::Path;

use image::{ColorType, DynamicImage};

use crate::error::{ImagingError, Result};
use crate::image::Image;

fn codec_err(path: &Path, e: impl ToString) -> ImagingError {
    ImagingError::Codec {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Converts a decoded raster; only 8-bit gray and RGB are accepted.
pub fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => Image::new(w, h, 1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => Image::new(w, h, 3, buf.into_raw()),
        other => Err(ImagingError::Unsupported(format!(
            "{:?} samples; only 8-bit gray or RGB images are supported",
            other.color()
        ))),
    }
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|e| codec_err(path, e))?;
    from_dynamic(reader.decode().map_err(|e| codec_err(path, e))?)
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = if img.channels() == 1 { ColorType::L8 } else { ColorType::Rgb8 };
    image::save_buffer_with_format(
        path,
        img.samples(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| codec_err(path, e))
}
