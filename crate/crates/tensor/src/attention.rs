//! Window self-attention building blocks.

use crate::error::{shape_err, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::layout::window_partition_index;
use crate::real::Real;
use crate::tensor::Tensor;

/// Additive logit used to block attention across shifted-window regions.
pub const MASK_VALUE: f64 = -100.0;

/// Projection weights of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// `[3C, C]`, rows ordered q, k, v.
    pub qkv_w: Var,
    pub qkv_b: Option<Var>,
    /// `[C, C]`
    pub proj_w: Var,
    pub proj_b: Option<Var>,
}

/// For each ordered token pair `(i, j)` of an `M×M` window, the row of the
/// `(2M-1)²`-entry bias table holding their relative offset.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut index = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / window, i % window);
        for j in 0..n {
            let (yj, xj) = (j / window, j % window);
            let dy = yi + window - 1 - yj;
            let dx = xi + window - 1 - xj;
            index.push(dy * span + dx);
        }
    }
    index
}

/// Mask for shifted windows: `[nW, M², M²]`, zero within a region and
/// [`MASK_VALUE`] across regions that were wrapped together by the roll.
pub fn shifted_window_mask<T: Real>(h: usize, w: usize, window: usize, shift: usize) -> Result<Tensor<T>> {
    if shift >= window {
        return Err(TensorError::Config(format!("shift {shift} must be smaller than window {window}")));
    }
    let region = |pos: usize, extent: usize| -> usize {
        if pos < extent - window {
            0
        } else if pos < extent - shift {
            1
        } else {
            2
        }
    };
    let ids = Tensor::<T>::from_fn(vec![1, h, w, 1], |i| {
        let (y, x) = (i / w, i % w);
        T::from_f64((region(y, h) * 3 + region(x, w)) as f64)
    })?;
    let (index, shape) = window_partition_index(ids.shape(), window)?;
    let windows = ids.gather(&index, shape)?;
    let n = window * window;
    let nw = windows.numel() / n;
    let masked = T::from_f64(MASK_VALUE);
    let mut data = Vec::with_capacity(nw * n * n);
    for win in windows.data().chunks(n) {
        for &a in win {
            for &b in win {
                data.push(if a == b { T::zero() } else { masked });
            }
        }
    }
    Tensor::new(vec![nw, n, n], data)
}

impl<T: Real> Graph<T> {
    /// Gathers a `[(2M-1)², heads]` table into a `[heads, M², M²]` logit bias.
    pub fn relative_position_bias(&mut self, table: Var, window: usize, heads: usize) -> Result<Var> {
        let span = 2 * window - 1;
        if self.shape(table) != [span * span, heads] {
            return shape_err(format!(
                "bias table must be [{}, {heads}], got {:?}",
                span * span,
                self.shape(table)
            ));
        }
        let rel = relative_position_index(window);
        let n = window * window;
        let mut index = Vec::with_capacity(heads * n * n);
        for h in 0..heads {
            index.extend(rel.iter().map(|&r| r * heads + h));
        }
        self.gather(table, index, vec![heads, n, n])
    }

    /// Scaled dot-product attention inside each window.
    ///
    /// `x` is `[Nw, N, C]`. `rel_bias` is `[heads, N, N]`. When given, `mask`
    /// is `[nW, N, N]` with `Nw` a multiple of `nW` (windows of one image
    /// are contiguous, batch-major).
    pub fn multi_head_attention(
        &mut self,
        x: Var,
        p: &AttentionParams,
        heads: usize,
        rel_bias: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return shape_err(format!("attention input must be [windows, tokens, channels], got {xs:?}"));
        }
        let (nw, n, c) = (xs[0], xs[1], xs[2]);
        if heads == 0 || c % heads != 0 {
            return Err(TensorError::Config(format!("{heads} heads do not divide {c} channels")));
        }
        if self.shape(rel_bias) != [heads, n, n] {
            return shape_err(format!(
                "relative bias must be [{heads}, {n}, {n}], got {:?}",
                self.shape(rel_bias)
            ));
        }
        let hd = c / heads;
        let qkv = self.linear(x, p.qkv_w, p.qkv_b)?;
        if self.shape(qkv)[2] != 3 * c {
            return shape_err(format!("qkv projection must produce {} channels", 3 * c));
        }

        let split = |part: usize| -> Vec<usize> {
            let mut index = Vec::with_capacity(nw * n * c);
            for w in 0..nw {
                for h in 0..heads {
                    for t in 0..n {
                        let base = (w * n + t) * 3 * c + part * c + h * hd;
                        index.extend(base..base + hd);
                    }
                }
            }
            index
        };
        let head_shape = vec![nw * heads, n, hd];
        let q = self.gather(qkv, split(0), head_shape.clone())?;
        let k = self.gather(qkv, split(1), head_shape.clone())?;
        let v = self.gather(qkv, split(2), head_shape)?;
        let q = self.scale(q, T::from_f64(1.0 / (hd as f64).sqrt()))?;

        let logits = self.batch_matmul(q, k, true)?;
        let logits = self.reshape(logits, vec![nw, heads, n, n])?;
        let mut logits = self.add_broadcast(logits, rel_bias)?;
        if let Some(mask) = mask {
            let ms = mask.shape();
            if ms.len() != 3 || ms[1] != n || ms[2] != n || ms[0] == 0 || nw % ms[0] != 0 {
                return shape_err(format!("mask {ms:?} incompatible with {nw} windows of {n} tokens"));
            }
            let per = n * n;
            let mut data = Vec::with_capacity(nw * heads * per);
            for w in 0..nw {
                let src = &mask.data()[(w % ms[0]) * per..(w % ms[0] + 1) * per];
                for _ in 0..heads {
                    data.extend_from_slice(src);
                }
            }
            let expanded = self.constant(Tensor::new(vec![nw, heads, n, n], data)?);
            logits = self.add(logits, expanded)?;
        }
        let attn = self.softmax(logits)?;
        let attn = self.reshape(attn, vec![nw * heads, n, n])?;
        let out = self.batch_matmul(attn, v, false)?;

        let mut merge = Vec::with_capacity(nw * n * c);
        for w in 0..nw {
            for t in 0..n {
                for h in 0..heads {
                    let base = ((w * heads + h) * n + t) * hd;
                    merge.extend(base..base + hd);
                }
            }
        }
        let merged = self.gather(out, merge, vec![nw, n, c])?;
        self.linear(merged, p.proj_w, p.proj_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_index_is_symmetric_offset() {
        let idx = relative_position_index(2);
        // token 0=(0,0), token 3=(1,1): offsets (-1,-1) → (0,0) → 0; reversed → (2,2) → 8
        assert_eq!(idx[3], 0);
        assert_eq!(idx[3 * 4], 8);
        assert!(idx.iter().all(|&i| i < 9));
        // diagonal always maps to the zero offset in the table centre
        assert!((0..4).all(|i| idx[i * 4 + i] == 4));
    }

    #[test]
    fn mask_blocks_only_wrapped_regions() {
        let m = shifted_window_mask::<f64>(4, 4, 2, 1).unwrap();
        assert_eq!(m.shape(), &[4, 4, 4]);
        // first window lies entirely in region 0
        assert!(m.data()[..16].iter().all(|&v| v == 0.0));
        // last window mixes all four regions: only the diagonal is unmasked
        let last = &m.data()[48..];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(last[i * 4 + j] == 0.0, i == j);
            }
        }
        assert!(shifted_window_mask::<f64>(4, 4, 2, 2).is_err());
    }
}
