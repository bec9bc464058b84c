//! Hierarchical Swin Transformer (HST) for ×4 compressed-image super-resolution.
//!
//! Three branches at scales 1, 1/2 and 1/4 of the input are enhanced by
//! stacks of residual swin transformer blocks; lower branches are upsampled
//! and fused into higher ones, and the high branch is reconstructed with two
//! sub-pixel convolutions. Presets `hst1`/`hst2`/`hst3` keep only the top one,
//! two or three branches.

mod checkpoint;
mod config;
mod error;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, MAGIC};
pub use config::{HSTConfig, PRESET_RSTBS, PRESET_WIDTHS};
pub use error::{ModelError, Result};
pub use forward::{
    extract_hierarchical, forward, fuse_into_branch, reconstruct_hr, rstb_forward, stl_forward, stl_shift, Context,
    ForwardStats,
};
pub use params::{build, count_for_config, count_parameters, layout, Bound, Init, ParamSpec, ParamStore};

use hstkit_tensor::{Graph, Real, Tensor};

/// Runs the network without recording gradients.
pub fn predict<T: Real>(cfg: &HSTConfig, store: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(input.clone());
    let (y, _) = forward(&mut g, &p, cfg, x)?;
    Ok(g.take(y))
}
