//! Fused pixel losses (mean over all elements) recorded as single graph nodes.

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    L1,
    /// `sqrt(diff² + eps)` per element.
    Charbonnier { eps: f64 },
    Mse,
}

impl LossKind {
    fn element(self, d: f64) -> f64 {
        match self {
            LossKind::L1 => d.abs(),
            LossKind::Charbonnier { eps } => (d * d + eps).sqrt(),
            LossKind::Mse => d * d,
        }
    }

    fn derivative(self, d: f64) -> f64 {
        match self {
            // subgradient 0 at ties
            LossKind::L1 => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Charbonnier { eps } => d / (d * d + eps).sqrt(),
            LossKind::Mse => 2.0 * d,
        }
    }
}

pub(crate) fn backward<T: Real>(kind: LossKind, sr: &[T], hr: &[T], upstream: T, g: &mut [T], sign: T) {
    let scale = upstream.as_f64() * sign.as_f64() / sr.len() as f64;
    for ((d, &a), &b) in g.iter_mut().zip(sr).zip(hr) {
        *d = *d + T::from_f64(scale * kind.derivative(a.as_f64() - b.as_f64()));
    }
}

impl<T: Real> Graph<T> {
    /// Mean elementwise loss between a prediction and a target of equal shape.
    pub fn pixel_loss(&mut self, kind: LossKind, sr: Var, hr: Var) -> Result<Var> {
        if self.shape(sr) != self.shape(hr) {
            return shape_err(format!(
                "loss operands differ in shape: {:?} vs {:?}",
                self.shape(sr),
                self.shape(hr)
            ));
        }
        if let LossKind::Charbonnier { eps } = kind {
            if eps <= 0.0 || !eps.is_finite() {
                return Err(crate::TensorError::Config(format!(
                    "charbonnier epsilon must be positive, got {eps}"
                )));
            }
        }
        let (a, b) = (self.value(sr).data(), self.value(hr).data());
        let total: f64 = a
            .iter()
            .zip(b)
            .map(|(&p, &q)| kind.element(p.as_f64() - q.as_f64()))
            .sum();
        let out = Tensor::scalar(T::from_f64(total / a.len() as f64));
        Ok(self.push(out, Op::Loss { kind, sr, hr }, &[sr, hr]))
    }
}
