use std::sync::Arc;

use crate::error::{shape_err, Result, TensorError};
use crate::layout;
use crate::real::Real;
use crate::tensor::{check_shape, Tensor};
use crate::{conv, loss, nn};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    /// `b` is broadcast over the leading axes of `x`.
    AddBroadcast(Var, Var),
    Reshape(Var),
    Gather {
        src: Var,
        index: Arc<Vec<usize>>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: conv::ConvGeom,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    Loss {
        kind: loss::LossKind,
        sr: Var,
        hr: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of primitive operations recorded in execution order.
///
/// A graph serves exactly one forward/backward pass: calling [`Graph::backward`]
/// a second time is an error rather than a silent accumulation.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded non-leaf operations.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    /// Records a leaf. Gradients are collected for it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, needs_grad)
    }

    /// Records a constant leaf (never receives a gradient).
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` for untracked values.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a leaf's value (with its gradient) out of the graph.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let placeholder = Tensor::scalar(T::zero());
        std::mem::replace(&mut self.nodes[v.0].value, placeholder)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, op, needs_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: operand shapes differ, {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |p, q| p + q, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q, "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        Ok(self.push(out, Op::Scale(a, s), &[a]))
    }

    /// `x + b` where `b`'s shape equals a suffix of `x`'s shape.
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return shape_err(format!("cannot broadcast {bs:?} over {xs:?}"));
        }
        let bv = self.value(b).data();
        let n = bv.len();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[i % n])
            .collect();
        let out = Tensor::new(xs.to_vec(), data)?;
        Ok(self.push(out, Op::AddBroadcast(x, b), &[x, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Records `out[i] = src[index[i]]`; backward scatter-adds through the same map.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(src).numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return shape_err(format!("gather index {bad} out of range for {n} values"));
        }
        let out = self.value(src).gather(&index, shape)?;
        let op = Op::Gather {
            src,
            index: Arc::new(index),
        };
        Ok(self.push(out, op, &[src]))
    }

    fn gather_map(&mut self, src: Var, map: Result<layout::IndexMap>) -> Result<Var> {
        let (index, shape) = map?;
        self.gather(src, index, shape)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let map = layout::permute_index(self.shape(x), perm);
        self.gather_map(x, map)
    }

    pub fn window_partition(&mut self, x: Var, window: usize) -> Result<Var> {
        let map = layout::window_partition_index(self.shape(x), window);
        self.gather_map(x, map)
    }

    pub fn window_reverse(&mut self, x: Var, window: usize, h: usize, w: usize) -> Result<Var> {
        let map = layout::window_reverse_index(self.shape(x), window, h, w);
        self.gather_map(x, map)
    }

    pub fn cyclic_shift(&mut self, x: Var, dy: isize, dx: isize) -> Result<Var> {
        let map = layout::cyclic_shift_index(self.shape(x), dy, dx);
        self.gather_map(x, map)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let map = layout::pixel_shuffle_index(self.shape(x), r);
        self.gather_map(x, map)
    }

    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let map = layout::pixel_unshuffle_index(self.shape(x), r);
        self.gather_map(x, map)
    }

    pub fn reflect_pad(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        let map = layout::reflect_pad_index(self.shape(x), top, bottom, left, right);
        self.gather_map(x, map)
    }

    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let map = layout::crop_index(self.shape(x), y0, x0, h, w);
        self.gather_map(x, map)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat needs at least one operand");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(format!("concat: {s:?} incompatible with {base:?} on axis {axis}"));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_f64(v.numel() as f64);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), &[x]))
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Every leaf with `requires_grad` receives a gradient buffer (zeros when
    /// unreachable from the loss).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad() {
                let n = node.value.numel();
                node.value.set_grad(g.unwrap_or_else(|| vec![T::zero(); n]));
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].needs_grad {
                let n = nodes[v.0].value.numel();
                f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
            }
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| g.iter_mut().zip(gout).for_each(|(d, &s)| *d = *d - s));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gout).zip(bv) {
                        *d = *d + s * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gout).zip(av) {
                        *d = *d + s * o;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |g| g.iter_mut().zip(gout).for_each(|(d, &o)| *d = *d + o * *s)),
            Op::AddBroadcast(x, b) => {
                acc(*x, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| {
                    let n = g.len();
                    for (k, &o) in gout.iter().enumerate() {
                        g[k % n] = g[k % n] + o;
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, gout)),
            Op::Gather { src, index } => acc(*src, &mut |g| {
                for (&j, &o) in index.iter().zip(gout) {
                    g[j] = g[j] + o;
                }
            }),
            Op::Concat { parts, axis } => {
                let shape = nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = nodes[p.0].value.shape()[*axis] * inner;
                    acc(p, &mut |g| {
                        for o in 0..outer {
                            let src = &gout[o * row + offset..o * row + offset + chunk];
                            add_into(&mut g[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|d| *d = *d + gout[0])),
            Op::Mean(x) => {
                let scale = gout[0] / T::from_f64(nodes[x.0].value.numel() as f64);
                acc(*x, &mut |g| g.iter_mut().for_each(|d| *d = *d + scale));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (rows, din) = nn::linear_rows(xv.shape());
                let dout = wv.shape()[0];
                acc(*x, &mut |g| nn::linear_backward_input(gout, wv.data(), g, rows, din, dout));
                acc(*w, &mut |g| nn::linear_backward_weight(gout, xv.data(), g, rows, din, dout));
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for r in gout.chunks(dout) {
                            add_into(g, r);
                        }
                    });
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let dims = nn::bmm_dims(av.shape(), bv.shape(), *trans_b)?;
                acc(*a, &mut |g| nn::bmm_backward_lhs(gout, bv.data(), g, dims, *trans_b));
                acc(*b, &mut |g| nn::bmm_backward_rhs(gout, av.data(), g, dims, *trans_b));
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                acc(*x, &mut |g| conv::backward_input(geom, wv.data(), gout, g));
                acc(*w, &mut |g| conv::backward_weight(geom, xv.data(), gout, g));
                if let Some(b) = b {
                    acc(*b, &mut |g| conv::backward_bias(geom, gout, g));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                rstd,
            } => {
                let gv = nodes[gamma.0].value.data();
                let d = gv.len();
                acc(*x, &mut |g| nn::layer_norm_backward_input(gout, gv, normalized, rstd, g, d));
                acc(*gamma, &mut |g| {
                    for (go, nr) in gout.chunks(d).zip(normalized.chunks(d)) {
                        for k in 0..d {
                            g[k] = g[k] + go[k] * nr[k];
                        }
                    }
                });
                acc(*beta, &mut |g| {
                    for go in gout.chunks(d) {
                        add_into(g, go);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                acc(*x, &mut |g| {
                    for ((d, &o), &v) in g.iter_mut().zip(gout).zip(xv) {
                        *d = *d + o * nn::gelu_grad(v);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &nodes[i].value;
                let d = *y.shape().last().expect("rank >= 1");
                acc(*x, &mut |g| nn::softmax_backward(y.data(), gout, g, d));
            }
            Op::Loss { kind, sr, hr } => {
                let (sv, hv) = (nodes[sr.0].value.data(), nodes[hr.0].value.data());
                acc(*sr, &mut |g| loss::backward(*kind, sv, hv, gout[0], g, T::one()));
                acc(*hr, &mut |g| loss::backward(*kind, sv, hv, gout[0], g, -T::one()));
            }
        }
        Ok(())
    }
}

pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

pub(crate) fn new_output<T: Real>(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
    check_shape(&shape)?;
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones_and_square_gives_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let xx = g.mul(x, x).unwrap();
        let s = g.sum(xx).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn second_backward_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(vec![2]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(TensorError::BackwardTwice));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(vec![2]).unwrap());
        assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn unused_leaves_get_zero_grad() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(vec![2]).unwrap());
        let y = g.param(Tensor::ones(vec![3]).unwrap());
        assert_eq!(g.op_count(), 0);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(y).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn repeated_use_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_and_broadcast() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_fn(vec![2, 1, 2], |i| i as f64).unwrap());
        let b = g.param(Tensor::from_fn(vec![2, 2, 2], |i| 10.0 + i as f64).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 2]);
        assert_eq!(g.value(c).data(), &[0., 1., 10., 11., 12., 13., 2., 3., 14., 15., 16., 17.]);
        let bias = g.param(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let d = g.add_broadcast(c, bias).unwrap();
        let w = g.constant(Tensor::from_fn(vec![2, 3, 2], |i| i as f64).unwrap());
        let e = g.mul(d, w).unwrap();
        let s = g.sum(e).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0., 1., 6., 7.]);
        assert_eq!(g.grad(bias).unwrap(), &[30., 36.]);
        assert!(g.grad(w).is_none());
        assert!(g.add_broadcast(c, a).is_err());
    }
}
