//! Pure data rearrangements expressed as gather index maps.
//!
//! Each builder returns `(index, out_shape)` with `out[i] = in[index[i]]`.
//! The same maps drive both the eager [`Tensor`] helpers and the recorded
//! graph ops, so forward results are bitwise copies and backward passes are
//! scatter-adds through the identical map.

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::{check_shape, Tensor};

pub type IndexMap = (Vec<usize>, Vec<usize>);

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return shape_err(format!("{what} expects rank {rank}, got shape {shape:?}"));
    }
    Ok(())
}

/// Axis permutation; `out.shape[i] = in.shape[perm[i]]`.
pub fn permute_index(shape: &[usize], perm: &[usize]) -> Result<IndexMap> {
    check_shape(shape)?;
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
        return shape_err(format!("{perm:?} is not a permutation of {} axes", shape.len()));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let mut index = Vec::with_capacity(numel);
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..numel {
        index.push(counter.iter().zip(perm).map(|(&c, &p)| c * in_strides[p]).sum());
        for ax in (0..counter.len()).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    Ok((index, out_shape))
}

/// `[B,H,W,C]` → `[B·(H/M)·(W/M), M, M, C]`, windows in row-major order per image.
pub fn window_partition_index(shape: &[usize], window: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "window_partition")?;
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if window == 0 {
        return shape_err("window size must be positive");
    }
    if h % window != 0 || w % window != 0 {
        return shape_err(format!(
            "window {window} does not divide spatial extent {h}x{w}; pad the input to a multiple of the window first"
        ));
    }
    let (nh, nw) = (h / window, w / window);
    let mut index = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for y in 0..window {
                    for x in 0..window {
                        let base = ((bi * h + wy * window + y) * w + wx * window + x) * c;
                        index.extend(base..base + c);
                    }
                }
            }
        }
    }
    Ok((index, vec![b * nh * nw, window, window, c]))
}

/// Inverse of [`window_partition_index`]: `[B·nW, M, M, C]` → `[B,H,W,C]`.
pub fn window_reverse_index(shape: &[usize], window: usize, h: usize, w: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "window_reverse")?;
    if window == 0 || shape[1] != window || shape[2] != window {
        return shape_err(format!("window_reverse expects [N,{window},{window},C], got {shape:?}"));
    }
    if h % window != 0 || w % window != 0 {
        return shape_err(format!("window {window} does not divide target extent {h}x{w}"));
    }
    let (nh, nw) = (h / window, w / window);
    if shape[0] % (nh * nw) != 0 {
        return shape_err(format!(
            "{} windows cannot tile batches of {h}x{w} images with window {window}",
            shape[0]
        ));
    }
    let (b, c) = (shape[0] / (nh * nw), shape[3]);
    let mut index = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let win = (bi * nh + y / window) * nw + x / window;
                let base = ((win * window + y % window) * window + x % window) * c;
                index.extend(base..base + c);
            }
        }
    }
    Ok((index, vec![b, h, w, c]))
}

/// Toroidal roll of the spatial axes of `[B,H,W,C]`: `out[y][x] = in[y-dy][x-dx]`.
pub fn cyclic_shift_index(shape: &[usize], dy: isize, dx: isize) -> Result<IndexMap> {
    expect_rank(shape, 4, "cyclic_shift")?;
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let sy = dy.rem_euclid(h as isize) as usize;
    let sx = dx.rem_euclid(w as isize) as usize;
    let mut index = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for y in 0..h {
            let src_y = (y + h - sy) % h;
            for x in 0..w {
                let src_x = (x + w - sx) % w;
                let base = ((bi * h + src_y) * w + src_x) * c;
                index.extend(base..base + c);
            }
        }
    }
    Ok((index, shape.to_vec()))
}

/// Depth-to-space: `[B, C·r², H, W]` → `[B, C, rH, rW]`.
pub fn pixel_shuffle_index(shape: &[usize], r: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "pixel_shuffle")?;
    let (b, cr, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if r == 0 || cr % (r * r) != 0 {
        return shape_err(format!("pixel_shuffle: {cr} channels not divisible by r²={}", r * r));
    }
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut index = Vec::with_capacity(b * cr * h * w);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let src_c = ci * r * r + (y % r) * r + x % r;
                    index.push(((bi * cr + src_c) * h + y / r) * w + x / r);
                }
            }
        }
    }
    Ok((index, vec![b, c, oh, ow]))
}

/// Space-to-depth: `[B, C, rH, rW]` → `[B, C·r², H, W]`.
pub fn pixel_unshuffle_index(shape: &[usize], r: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "pixel_unshuffle")?;
    let (b, c, oh, ow) = (shape[0], shape[1], shape[2], shape[3]);
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return shape_err(format!("pixel_unshuffle: {oh}x{ow} not divisible by r={r}"));
    }
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let mut index = Vec::with_capacity(b * cr * h * w);
    for bi in 0..b {
        for co in 0..cr {
            let (ci, i, j) = (co / (r * r), (co % (r * r)) / r, co % r);
            for y in 0..h {
                for x in 0..w {
                    index.push(((bi * c + ci) * oh + y * r + i) * ow + x * r + j);
                }
            }
        }
    }
    Ok((index, vec![b, cr, h, w]))
}

/// Mirror index without edge repetition, folded so any pad amount is valid.
pub fn reflect_coord(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect padding of the spatial axes of `[B,C,H,W]` to `[B,C,H+top+bottom,W+left+right]`.
pub fn reflect_pad_index(shape: &[usize], top: usize, bottom: usize, left: usize, right: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "reflect_pad")?;
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h + top + bottom, w + left + right);
    let mut index = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for y in 0..oh {
            let sy = reflect_coord(y as isize - top as isize, h);
            for x in 0..ow {
                let sx = reflect_coord(x as isize - left as isize, w);
                index.push((plane * h + sy) * w + sx);
            }
        }
    }
    Ok((index, vec![b, c, oh, ow]))
}

/// Spatial crop of `[B,C,H,W]` starting at `(y0, x0)`.
pub fn crop_index(shape: &[usize], y0: usize, x0: usize, h: usize, w: usize) -> Result<IndexMap> {
    expect_rank(shape, 4, "crop")?;
    let (b, c, ih, iw) = (shape[0], shape[1], shape[2], shape[3]);
    if h == 0 || w == 0 || y0 + h > ih || x0 + w > iw {
        return shape_err(format!("crop {h}x{w}@({y0},{x0}) exceeds {ih}x{iw}"));
    }
    let mut index = Vec::with_capacity(b * c * h * w);
    for plane in 0..b * c {
        for y in 0..h {
            let row = (plane * ih + y0 + y) * iw + x0;
            index.extend(row..row + w);
        }
    }
    Ok((index, vec![b, c, h, w]))
}

impl<T: Real> Tensor<T> {
    fn apply(&self, map: Result<IndexMap>) -> Result<Self> {
        let (index, shape) = map?;
        self.gather(&index, shape)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        self.apply(permute_index(self.shape(), perm))
    }

    pub fn window_partition(&self, window: usize) -> Result<Self> {
        self.apply(window_partition_index(self.shape(), window))
    }

    pub fn window_reverse(&self, window: usize, h: usize, w: usize) -> Result<Self> {
        self.apply(window_reverse_index(self.shape(), window, h, w))
    }

    pub fn cyclic_shift(&self, dy: isize, dx: isize) -> Result<Self> {
        self.apply(cyclic_shift_index(self.shape(), dy, dx))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        self.apply(pixel_shuffle_index(self.shape(), r))
    }

    pub fn pixel_unshuffle(&self, r: usize) -> Result<Self> {
        self.apply(pixel_unshuffle_index(self.shape(), r))
    }

    pub fn reflect_pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Result<Self> {
        self.apply(reflect_pad_index(self.shape(), top, bottom, left, right))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        self.apply(crop_index(self.shape(), y0, x0, h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iota(shape: Vec<usize>) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64).unwrap()
    }

    #[test]
    fn partition_single_window_is_identity_layout() {
        let x = iota(vec![2, 4, 4, 3]);
        let p = x.window_partition(4).unwrap();
        assert_eq!(p.shape(), &[2, 4, 4, 3]);
        assert_eq!(p.data(), x.data());
    }

    #[test]
    fn partition_four_windows_index_oracle() {
        let x = iota(vec![1, 4, 4, 1]);
        let p = x.window_partition(2).unwrap();
        assert_eq!(p.shape(), &[4, 2, 2, 1]);
        let expected = [
            [0., 1., 4., 5.],
            [2., 3., 6., 7.],
            [8., 9., 12., 13.],
            [10., 11., 14., 15.],
        ];
        for (win, exp) in p.data().chunks(4).zip(expected.iter()) {
            assert_eq!(win, exp);
        }
        assert_eq!(p.window_reverse(2, 4, 4).unwrap(), x);
    }

    #[test]
    fn partition_rejects_indivisible() {
        let x = iota(vec![1, 6, 4, 1]);
        let err = x.window_partition(4).unwrap_err().to_string();
        assert!(err.contains("pad"), "{err}");
        assert!(iota(vec![8, 2, 2, 1]).window_reverse(2, 4, 6).is_err());
    }

    #[test]
    fn shift_examples() {
        let x = Tensor::<f64>::new(vec![1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(x.cyclic_shift(0, 0).unwrap(), x);
        assert_eq!(x.cyclic_shift(2, 2).unwrap(), x);
        assert_eq!(x.cyclic_shift(1, 1).unwrap().data(), &[4., 3., 2., 1.]);
    }

    #[test]
    fn shuffle_examples() {
        let x = Tensor::<f64>::new(vec![1, 4, 1, 1], vec![1., 2., 3., 4.]).unwrap();
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
        let z = iota(vec![2, 3, 5, 4]);
        assert_eq!(z.pixel_shuffle(1).unwrap(), z);
        assert!(iota(vec![1, 6, 2, 2]).pixel_shuffle(2).is_err());
    }

    #[test]
    fn reflect_pad_matches_mirror_rule() {
        let x = Tensor::<f64>::new(vec![1, 1, 1, 3], vec![1., 2., 3.]).unwrap();
        let p = x.reflect_pad(0, 0, 2, 4).unwrap();
        assert_eq!(p.data(), &[3., 2., 1., 2., 3., 2., 1., 2., 3.]);
        assert_eq!(reflect_coord(-1, 1), 0);
        assert_eq!(p.crop(0, 2, 1, 3).unwrap(), x);
    }

    #[test]
    fn permute_roundtrip() {
        let x = iota(vec![2, 3, 4, 5]);
        let y = x.permute(&[0, 2, 3, 1]).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 3]);
        assert_eq!(y.data()[1], x.data()[20]);
        assert_eq!(y.permute(&[0, 3, 1, 2]).unwrap(), x);
        assert!(x.permute(&[0, 0, 1, 2]).is_err());
    }

    fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut state = seed | 1;
        Tensor::from_fn(shape, |_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f32) / (u64::MAX as f32) - 0.5
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn partition_reverse_roundtrip(b in 1usize..3, m in 1usize..5, nh in 1usize..4, nw in 1usize..4, c in 1usize..4, seed: u64) {
            let (h, w) = (m * nh, m * nw);
            let x = random_tensor(vec![b, h, w, c], seed);
            let back = x.window_partition(m).unwrap().window_reverse(m, h, w).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn shuffle_unshuffle_roundtrip(b in 1usize..3, c in 1usize..4, r in 1usize..4, h in 1usize..5, w in 1usize..5, seed: u64) {
            let x = random_tensor(vec![b, c * r * r, h, w], seed);
            prop_assert_eq!(x.pixel_shuffle(r).unwrap().pixel_unshuffle(r).unwrap(), x.clone());
            let y = random_tensor(vec![b, c, h * r, w * r], seed ^ 7);
            prop_assert_eq!(y.pixel_unshuffle(r).unwrap().pixel_shuffle(r).unwrap(), y);
        }

        #[test]
        fn shift_then_unshift(h in 1usize..7, w in 1usize..7, dy in -9isize..9, dx in -9isize..9, seed: u64) {
            let x = random_tensor(vec![2, h, w, 3], seed);
            prop_assert_eq!(x.cyclic_shift(dy, dx).unwrap().cyclic_shift(-dy, -dx).unwrap(), x);
        }
    }
}
