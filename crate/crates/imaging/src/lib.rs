//! 8-bit images and everything needed to turn an HR image into a degraded
//! LR training input: bicubic resampling, a baseline JPEG codec, blur/noise
//! stages, dihedral transforms and PNG I/O.

pub mod degrade;
pub mod dihedral;
mod error;
mod image;
pub mod io;
pub mod jpeg;
pub mod resize;

pub use crate::degrade::{degrade, degrade_seeded, DegradationSpec, Stage, StagePlugin};
pub use crate::dihedral::Dihedral;
pub use crate::error::{ImagingError, Result};
pub use crate::image::{quantize_level, quantize_unit, Image};
pub use crate::io::{load_png, save_png};
pub use crate::resize::{bicubic_resize, cubic};
