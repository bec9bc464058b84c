//! Dense layers, normalization and activations over the last axis.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{shape_err, Result};
use crate::graph::{new_output, Graph, Op, Var};
use crate::real::{gemm, Real, Strides};

pub(crate) fn linear_rows(shape: &[usize]) -> (usize, usize) {
    let din = *shape.last().expect("rank >= 1");
    (shape.iter().product::<usize>() / din, din)
}

pub(crate) fn linear_backward_input<T: Real>(dy: &[T], w: &[T], dx: &mut [T], rows: usize, din: usize, dout: usize) {
    gemm(
        rows,
        dout,
        din,
        T::one(),
        dy,
        Strides::row_major(dout),
        w,
        Strides::row_major(din),
        T::one(),
        dx,
        Strides::row_major(din),
    );
}

pub(crate) fn linear_backward_weight<T: Real>(dy: &[T], x: &[T], dw: &mut [T], rows: usize, din: usize, dout: usize) {
    gemm(
        dout,
        rows,
        din,
        T::one(),
        dy,
        Strides::transposed(dout),
        x,
        Strides::row_major(din),
        T::one(),
        dw,
        Strides::row_major(din),
    );
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BmmDims {
    pub groups: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<BmmDims> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return shape_err(format!("batched matmul expects [G,m,k] and [G,k,n], got {a:?} and {b:?}"));
    }
    let (bk, n) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
    if a[2] != bk {
        return shape_err(format!(
            "batched matmul inner extents differ: {a:?} x {b:?} (transposed rhs: {trans_b})"
        ));
    }
    Ok(BmmDims {
        groups: a[0],
        m: a[1],
        k: a[2],
        n,
    })
}

fn rhs_strides(d: BmmDims, trans_b: bool) -> Strides {
    if trans_b {
        Strides::transposed(d.k)
    } else {
        Strides::row_major(d.n)
    }
}

pub(crate) fn bmm_backward_lhs<T: Real>(dc: &[T], b: &[T], da: &mut [T], d: BmmDims, trans_b: bool) {
    // dA = dC · op(B)^T
    let bt = if trans_b {
        Strides::row_major(d.k)
    } else {
        Strides::transposed(d.n)
    };
    for g in 0..d.groups {
        gemm(
            d.m,
            d.n,
            d.k,
            T::one(),
            &dc[g * d.m * d.n..],
            Strides::row_major(d.n),
            &b[g * d.k * d.n..],
            bt,
            T::one(),
            &mut da[g * d.m * d.k..],
            Strides::row_major(d.k),
        );
    }
}

pub(crate) fn bmm_backward_rhs<T: Real>(dc: &[T], a: &[T], db: &mut [T], d: BmmDims, trans_b: bool) {
    for g in 0..d.groups {
        let dcg = &dc[g * d.m * d.n..];
        let ag = &a[g * d.m * d.k..];
        let dbg = &mut db[g * d.k * d.n..];
        if trans_b {
            // dB[n,k] = dC^T · A
            gemm(
                d.n,
                d.m,
                d.k,
                T::one(),
                dcg,
                Strides::transposed(d.n),
                ag,
                Strides::row_major(d.k),
                T::one(),
                dbg,
                Strides::row_major(d.k),
            );
        } else {
            // dB[k,n] = A^T · dC
            gemm(
                d.k,
                d.m,
                d.n,
                T::one(),
                ag,
                Strides::transposed(d.k),
                dcg,
                Strides::row_major(d.n),
                T::one(),
                dbg,
                Strides::row_major(d.n),
            );
        }
    }
}

pub(crate) fn layer_norm_backward_input<T: Real>(
    dy: &[T],
    gamma: &[T],
    normalized: &[T],
    rstd: &[T],
    dx: &mut [T],
    d: usize,
) {
    let inv_d = T::from_f64(1.0 / d as f64);
    for (r, ((go, nr), dxr)) in dy.chunks(d).zip(normalized.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
        let mut mean_dn = T::zero();
        let mut mean_dn_n = T::zero();
        for k in 0..d {
            let dn = go[k] * gamma[k];
            mean_dn = mean_dn + dn;
            mean_dn_n = mean_dn_n + dn * nr[k];
        }
        mean_dn = mean_dn * inv_d;
        mean_dn_n = mean_dn_n * inv_d;
        for k in 0..d {
            let dn = go[k] * gamma[k];
            dxr[k] = dxr[k] + rstd[r] * (dn - mean_dn - nr[k] * mean_dn_n);
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_value<T: Real>(x: T) -> T {
    let v = x.as_f64();
    T::from_f64(v * std_normal_cdf(v))
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let v = x.as_f64();
    let pdf = (-0.5 * v * v).exp() / (2.0 * PI).sqrt();
    T::from_f64(std_normal_cdf(v) + v * pdf)
}

pub(crate) fn softmax_rows<T: Real>(x: &[T], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e = *e / total;
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Real>(y: &[T], dy: &[T], dx: &mut [T], d: usize) {
    for ((yr, gr), dr) in y.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)) {
        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
        for k in 0..d {
            dr[k] = dr[k] + yr[k] * (gr[k] - dot);
        }
    }
}

impl<T: Real> Graph<T> {
    /// Affine map over the last axis: `x · wᵀ + b` with `w: [Dout, Din]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let (rows, din) = linear_rows(&xs);
        if ws.len() != 2 || ws[1] != din {
            return shape_err(format!("linear: input last axis {din} does not match weight {ws:?}"));
        }
        let dout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return shape_err(format!("linear: bias must be [{dout}], got {:?}", self.shape(b)));
            }
        }
        let mut data = match b {
            Some(b) => self.value(b).data().repeat(rows),
            None => vec![T::zero(); rows * dout],
        };
        gemm(
            rows,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            Strides::row_major(din),
            self.value(w).data(),
            Strides::transposed(din),
            T::one(),
            &mut data,
            Strides::row_major(dout),
        );
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = dout;
        let out = new_output(shape, data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// `[G,m,k] · [G,k,n]`, or `[G,m,k] · [G,n,k]ᵀ` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let d = bmm_dims(self.shape(a), self.shape(b), trans_b)?;
        let mut data = vec![T::zero(); d.groups * d.m * d.n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for g in 0..d.groups {
            gemm(
                d.m,
                d.k,
                d.n,
                T::one(),
                &av[g * d.m * d.k..],
                Strides::row_major(d.k),
                &bv[g * d.k * d.n..],
                rhs_strides(d, trans_b),
                T::zero(),
                &mut data[g * d.m * d.n..],
                Strides::row_major(d.n),
            );
        }
        let out = new_output(vec![d.groups, d.m, d.n], data)?;
        Ok(self.push(out, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// Normalizes each position over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err(format!(
                "layer_norm: affine parameters must be [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x).data();
        let rows = xv.len() / d;
        let mut normalized = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(xv.len());
        let inv_d = T::from_f64(1.0 / d as f64);
        for row in xv.chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + T::from_f64(eps)).sqrt();
            rstd.push(r);
            for k in 0..d {
                let n = (row[k] - mean) * r;
                normalized.push(n);
                data.push(gv[k] * n + bv[k]);
            }
        }
        let out = new_output(xs, data)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Gaussian error linear unit, exact `x·Φ(x)` form.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu_value);
        Ok(self.push(out, Op::Gelu(x), &[x]))
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().expect("rank >= 1");
        let out = new_output(v.shape().to_vec(), softmax_rows(v.data(), d))?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }
}
