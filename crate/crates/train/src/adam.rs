//! Bias-corrected Adam over a [`ParamStore`].

use std::collections::BTreeMap;

use hstkit_model::ParamStore;
use hstkit_tensor::{Real, Tensor};

use crate::error::{Result, TrainError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            let mut s = ParamStore::new();
            for (name, t) in params.iter() {
                s.insert(name, Tensor::zeros(t.shape().to_vec()).expect("valid shape")).expect("unique names");
            }
            s
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One update. `grads` must hold a tensor for every parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) -> Result<()> {
        for (name, _) in params.iter() {
            grads.get(name).map_err(|_| TrainError::MissingGrad(name.to_string()))?;
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (tb1, tb2, teps) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(self.eps));
        let (one, step_size) = (T::one(), T::from_f64(lr / c1));
        let sqrt_c2 = T::from_f64(c2.sqrt());
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            if g.shape() != p.shape() {
                return Err(TrainError::Config(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = tb1 * *m + (one - tb1) * g;
                *v = tb2 * *v + (one - tb2) * g * g;
                *p = *p - step_size * *m / ((*v).sqrt() / sqrt_c2 + teps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors (`adam.m.<param>`, `adam.v.<param>`)
    /// plus scalar metadata, for checkpointing.
    pub fn export(&self) -> (ParamStore<T>, BTreeMap<String, String>) {
        let mut state = ParamStore::new();
        for (prefix, store) in [("adam.m.", &self.m), ("adam.v.", &self.v)] {
            for (name, t) in store.iter() {
                state.insert(format!("{prefix}{name}"), t.clone()).expect("unique names");
            }
        }
        let meta = BTreeMap::from([
            ("adam.step".to_string(), self.step.to_string()),
            ("adam.beta1".to_string(), self.beta1.to_string()),
            ("adam.beta2".to_string(), self.beta2.to_string()),
            ("adam.eps".to_string(), self.eps.to_string()),
        ]);
        (state, meta)
    }

    /// Inverse of [`AdamState::export`]; checks buffers against `params`.
    pub fn import(params: &ParamStore<T>, state: &ParamStore<T>, meta: &BTreeMap<String, String>) -> Result<Self> {
        let field = |key: &str| -> Result<&String> {
            meta.get(key).ok_or_else(|| TrainError::Config(format!("checkpoint lacks optimizer field {key}")))
        };
        let float = |key: &str| -> Result<f64> {
            field(key)?.parse().map_err(|_| TrainError::Config(format!("bad optimizer field {key}")))
        };
        let mut out = AdamState::new(params);
        out.step = field("adam.step")?.parse().map_err(|_| TrainError::Config("bad adam.step".into()))?;
        out.beta1 = float("adam.beta1")?;
        out.beta2 = float("adam.beta2")?;
        out.eps = float("adam.eps")?;
        for (prefix, store) in [("adam.m.", &mut out.m), ("adam.v.", &mut out.v)] {
            for (name, t) in store.iter_mut() {
                let saved = state
                    .get(&format!("{prefix}{name}"))
                    .map_err(|_| TrainError::Config(format!("checkpoint lacks {prefix}{name}")))?;
                if saved.shape() != t.shape() {
                    return Err(TrainError::Config(format!("{prefix}{name} has shape {:?}", saved.shape())));
                }
                *t = saved.clone();
            }
        }
        Ok(out)
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64() * v.as_f64()))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = T::from_f64(max_norm / norm);
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * k);
        }
    }
    norm
}
