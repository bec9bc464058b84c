//! 2-D cross-correlation with zero padding, lowered to GEMM via im2col.

use crate::error::{shape_err, Result};
use crate::graph::{new_output, Graph, Op, Var};
use crate::real::{gemm, Real, Strides};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
    fn in_item(&self) -> usize {
        self.cin * self.h * self.w
    }
}

pub(crate) fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if x.len() != 4 || w.len() != 4 {
        return shape_err(format!("conv2d expects [B,C,H,W] input and [Cout,Cin,k,k] weight, got {x:?} and {w:?}"));
    }
    if w[2] != w[3] {
        return shape_err(format!("conv2d kernels must be square, got {}x{}", w[2], w[3]));
    }
    if x[1] != w[1] {
        return shape_err(format!(
            "conv2d channel mismatch: input has {} channels but weight expects {}",
            x[1], w[1]
        ));
    }
    if stride == 0 {
        return shape_err("conv2d stride must be positive");
    }
    let k = w[2];
    let (h, wd) = (x[2], x[3]);
    if k > h + 2 * pad || k > wd + 2 * pad {
        return shape_err(format!("kernel {k} larger than padded input {}x{}", h + 2 * pad, wd + 2 * pad));
    }
    Ok(ConvGeom {
        batch: x[0],
        cin: x[1],
        h,
        w: wd,
        cout: w[0],
        k,
        stride,
        pad,
        oh: (h + 2 * pad - k) / stride + 1,
        ow: (wd + 2 * pad - k) / stride + 1,
    })
}

/// Source coordinate for output position `o` and kernel tap `t`, if inside the image.
#[inline]
fn source(o: usize, t: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + t).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let img = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * plane;
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    match source(oy, ky, g.stride, g.pad, g.h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            let src = &img[iy * g.w..(iy + 1) * g.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match source(ox, kx, g.stride, g.pad, g.w) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let img = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * plane;
                for oy in 0..g.oh {
                    let Some(iy) = source(oy, ky, g.stride, g.pad, g.h) else {
                        continue;
                    };
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        if let Some(ix) = source(ox, kx, g.stride, g.pad, g.w) {
                            img[iy * g.w + ix] = img[iy * g.w + ix] + v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let mut cols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        im2col(g, &x[n * g.in_item()..(n + 1) * g.in_item()], &mut cols);
        let y = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(b) = b {
            for (row, &bias) in y.chunks_mut(plane).zip(b) {
                row.fill(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            g.cout,
            patch,
            plane,
            T::one(),
            w,
            Strides::row_major(patch),
            &cols,
            Strides::row_major(plane),
            beta,
            y,
            Strides::row_major(plane),
        );
    }
    out
}

pub(crate) fn backward_input<T: Real>(g: &ConvGeom, w: &[T], dy: &[T], dx: &mut [T]) {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut dcols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        let dyn_ = &dy[n * g.cout * plane..(n + 1) * g.cout * plane];
        gemm(
            patch,
            g.cout,
            plane,
            T::one(),
            w,
            Strides::transposed(patch),
            dyn_,
            Strides::row_major(plane),
            T::zero(),
            &mut dcols,
            Strides::row_major(plane),
        );
        col2im_add(g, &dcols, &mut dx[n * g.in_item()..(n + 1) * g.in_item()]);
    }
}

pub(crate) fn backward_weight<T: Real>(g: &ConvGeom, x: &[T], dy: &[T], dw: &mut [T]) {
    let (patch, plane) = (g.patch(), g.out_plane());
    let mut cols = vec![T::zero(); patch * plane];
    for n in 0..g.batch {
        im2col(g, &x[n * g.in_item()..(n + 1) * g.in_item()], &mut cols);
        gemm(
            g.cout,
            plane,
            patch,
            T::one(),
            &dy[n * g.cout * plane..(n + 1) * g.cout * plane],
            Strides::row_major(plane),
            &cols,
            Strides::transposed(plane),
            T::one(),
            dw,
            Strides::row_major(patch),
        );
    }
}

pub(crate) fn backward_bias<T: Real>(g: &ConvGeom, dy: &[T], db: &mut [T]) {
    let plane = g.out_plane();
    for (i, row) in dy.chunks(plane).enumerate() {
        let c = i % g.cout;
        db[c] = row.iter().fold(db[c], |a, &v| a + v);
    }
}

impl<T: Real> Graph<T> {
    /// Zero-padded cross-correlation: `[B,Cin,H,W] * [Cout,Cin,k,k] + [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = geometry(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return shape_err(format!("conv2d bias must be [{}], got {:?}", geom.cout, self.shape(b)));
            }
        }
        let data = forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = new_output(vec![geom.batch, geom.cout, geom.oh, geom.ow], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &inputs))
    }
}
