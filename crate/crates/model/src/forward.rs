//! The network's forward pass, recorded on a [`Graph`].

use std::collections::HashMap;

use hstkit_tensor::{shifted_window_mask, AttentionParams, Graph, Real, Tensor, Var};

use crate::config::HSTConfig;
use crate::error::{ModelError, Result};
use crate::params::Bound;

const LN_EPS: f64 = 1e-5;

/// Instrumentation collected during one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub fusions: usize,
    pub rstbs: usize,
    pub stls: usize,
    pub shifted_stls: usize,
}

/// Per-pass state: statistics and shifted-window masks keyed by (h, w, shift).
pub struct Context<T: Real> {
    pub stats: ForwardStats,
    masks: HashMap<(usize, usize, usize), Tensor<T>>,
}

impl<T: Real> Default for Context<T> {
    fn default() -> Self {
        Context {
            stats: ForwardStats::default(),
            masks: HashMap::new(),
        }
    }
}

impl<T: Real> Context<T> {
    fn mask(&mut self, h: usize, w: usize, window: usize, shift: usize) -> Result<&Tensor<T>> {
        if !self.masks.contains_key(&(h, w, shift)) {
            let m = shifted_window_mask(h, w, window, shift)?;
            self.masks.insert((h, w, shift), m);
        }
        Ok(&self.masks[&(h, w, shift)])
    }
}

fn conv<T: Real>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), stride, pad)?)
}

fn linear<T: Real>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(g.linear(x, w, Some(b))?)
}

fn norm<T: Real>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(g.layer_norm(x, w, b, LN_EPS)?)
}

/// Shallow features `(F_h, F_m, F_l)`, truncated to the configured branches
/// and returned low → high. `F_l` is computed from `F_m`.
pub fn extract_hierarchical<T: Real>(g: &mut Graph<T>, p: &Bound, cfg: &HSTConfig, x: Var) -> Result<Vec<Var>> {
    let n = cfg.branches();
    let high = conv(g, p, &format!("{}.extract", cfg.branch_name(n - 1)), x, 1, 3)?;
    let mut feats = vec![high];
    if n >= 2 {
        let mid = conv(g, p, &format!("{}.extract", cfg.branch_name(n - 2)), x, 2, 2)?;
        feats.push(mid);
        if n == 3 {
            let low = conv(g, p, "low.extract", mid, 2, 1)?;
            feats.push(low);
        }
    }
    feats.reverse();
    Ok(feats)
}

/// One swin transformer layer on `[B, H, W, C]` tokens, with residual
/// connections around the attention and MLP sub-blocks.
pub fn stl_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &HSTConfig,
    ctx: &mut Context<T>,
    x: Var,
    shift: usize,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let m = cfg.window;
    let s = shift as isize;

    let mut y = norm(g, p, &format!("{prefix}.norm1"), x)?;
    if shift > 0 {
        y = g.cyclic_shift(y, -s, -s)?;
    }
    let windows = g.window_partition(y, m)?;
    let nw = g.shape(windows)[0];
    let tokens = g.reshape(windows, vec![nw, m * m, c])?;
    let attn = AttentionParams {
        qkv_w: p.get(&format!("{prefix}.attn.qkv.weight"))?,
        qkv_b: Some(p.get(&format!("{prefix}.attn.qkv.bias"))?),
        proj_w: p.get(&format!("{prefix}.attn.proj.weight"))?,
        proj_b: Some(p.get(&format!("{prefix}.attn.proj.bias"))?),
    };
    let table = p.get(&format!("{prefix}.attn.rel_bias"))?;
    let bias = g.relative_position_bias(table, m, cfg.heads)?;
    let mask = if shift > 0 { Some(ctx.mask(h, w, m, shift)?) } else { None };
    let out = g.multi_head_attention(tokens, &attn, cfg.heads, bias, mask)?;
    let out = g.reshape(out, vec![nw, m, m, c])?;
    let mut out = g.window_reverse(out, m, h, w)?;
    if shift > 0 {
        out = g.cyclic_shift(out, s, s)?;
        ctx.stats.shifted_stls += 1;
    }
    let x = g.add(x, out)?;

    let y = norm(g, p, &format!("{prefix}.norm2"), x)?;
    let y = linear(g, p, &format!("{prefix}.mlp.fc1"), y)?;
    let y = g.gelu(y)?;
    let y = linear(g, p, &format!("{prefix}.mlp.fc2"), y)?;
    ctx.stats.stls += 1;
    debug_assert_eq!(g.shape(y), [b, h, w, c]);
    Ok(g.add(x, y)?)
}

/// Shift used by STL `index` of a block on an `h × w` map: alternating 0 and
/// M/2, and always 0 when a single window covers the map.
pub fn stl_shift(cfg: &HSTConfig, index: usize, h: usize, w: usize) -> usize {
    if index % 2 == 1 && h.min(w) > cfg.window {
        cfg.window / 2
    } else {
        0
    }
}

/// Residual swin transformer block on `[B, C, H, W]` features:
/// STLs, a 3×3 convolution, and a skip from the block input.
pub fn rstb_forward<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    cfg: &HSTConfig,
    ctx: &mut Context<T>,
    x: Var,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (h, w) = (shape[2], shape[3]);
    let mut t = g.permute(x, &[0, 2, 3, 1])?;
    for s in 0..cfg.stl_per_rstb {
        let shift = stl_shift(cfg, s, h, w);
        t = stl_forward(g, p, &format!("{prefix}.stl{s}"), cfg, ctx, t, shift)?;
    }
    let t = g.permute(t, &[0, 3, 1, 2])?;
    let t = conv(g, p, &format!("{prefix}.conv"), t, 1, 1)?;
    ctx.stats.rstbs += 1;
    Ok(g.add(t, x)?)
}

/// Upsamples an enhanced lower-branch feature ×2 (conv to 4C, pixel shuffle),
/// concatenates it after the higher-branch feature and fuses with a 3×3 conv.
pub fn fuse_into_branch<T: Real>(
    g: &mut Graph<T>,
    p: &Bound,
    name: &str,
    ctx: &mut Context<T>,
    low: Var,
    high: Var,
) -> Result<Var> {
    let (ls, hs) = (g.shape(low).to_vec(), g.shape(high).to_vec());
    if ls.len() != 4 || hs.len() != 4 || hs[2] != 2 * ls[2] || hs[3] != 2 * ls[3] || hs[0] != ls[0] {
        return Err(ModelError::Tensor(hstkit_tensor::TensorError::Shape(format!(
            "fusion needs the higher branch at twice the lower resolution: {ls:?} vs {hs:?}"
        ))));
    }
    let up = conv(g, p, &format!("{name}.up"), low, 1, 1)?;
    let up = g.pixel_shuffle(up, 2)?;
    let cat = g.concat(&[high, up], 1)?;
    ctx.stats.fusions += 1;
    conv(g, p, &format!("{name}.conv"), cat, 1, 1)
}

/// Two sub-pixel ×2 stages and a final 3×3 conv to RGB.
pub fn reconstruct_hr<T: Real>(g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
    let mut y = x;
    for stage in ["recon.up0", "recon.up1"] {
        y = conv(g, p, stage, y, 1, 1)?;
        y = g.pixel_shuffle(y, 2)?;
    }
    conv(g, p, "recon.out", y, 1, 1)
}

/// Full network: `[B, 3, H, W]` → `[B, 3, 4H, 4W]`.
///
/// Inputs are reflect-padded on the bottom/right to a multiple of
/// `window · 2^(branches-1)` and the output is cropped back.
pub fn forward<T: Real>(g: &mut Graph<T>, p: &Bound, cfg: &HSTConfig, x: Var) -> Result<(Var, ForwardStats)> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(ModelError::Tensor(hstkit_tensor::TensorError::Shape(format!(
            "expected [B, {}, H, W] input, got {shape:?}",
            cfg.in_channels
        ))));
    }
    let (h, w) = (shape[2], shape[3]);
    let mult = cfg.pad_multiple();
    let (ph, pw) = (h.div_ceil(mult) * mult, w.div_ceil(mult) * mult);
    let input = if (ph, pw) != (h, w) { g.reflect_pad(x, 0, ph - h, 0, pw - w)? } else { x };

    let mut ctx = Context::default();
    let feats = extract_hierarchical(g, p, cfg, input)?;
    let mut carried: Option<Var> = None;
    for (i, &f) in feats.iter().enumerate() {
        let b = cfg.branch_name(i);
        let mut y = match carried {
            Some(low) => fuse_into_branch(g, p, &format!("fuse.{}_{b}", cfg.branch_name(i - 1)), &mut ctx, low, f)?,
            None => f,
        };
        for r in 0..cfg.rstbs[i] {
            y = rstb_forward(g, p, &format!("{b}.rstb{r}"), cfg, &mut ctx, y)?;
        }
        carried = Some(y);
    }
    let out = reconstruct_hr(g, p, carried.expect("at least one branch"))?;
    let s = cfg.scale;
    let out = if (ph, pw) != (h, w) { g.crop(out, 0, 0, s * h, s * w)? } else { out };
    Ok((out, ctx.stats))
}
