use std::fmt;
use std::str::FromStr;

use hstkit_tensor::{Graph, LossKind, Real, Tensor, Var};

use crate::{MetricError, Result};

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossName {
    L1,
    Charbonnier,
    Mse,
}

/// Loss choice; `epsilon` only matters for Charbonnier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossName,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::l1()
    }
}

impl LossConfig {
    pub fn l1() -> Self {
        LossConfig {
            kind: LossName::L1,
            epsilon: DEFAULT_CHARBONNIER_EPS,
        }
    }

    pub fn charbonnier(epsilon: f64) -> Self {
        LossConfig {
            kind: LossName::Charbonnier,
            epsilon,
        }
    }

    pub fn mse() -> Self {
        LossConfig {
            kind: LossName::Mse,
            epsilon: DEFAULT_CHARBONNIER_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LossName::Charbonnier && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(MetricError::Config(format!("charbonnier epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<LossKind> {
        self.validate()?;
        Ok(match self.kind {
            LossName::L1 => LossKind::L1,
            LossName::Charbonnier => LossKind::Charbonnier { eps: self.epsilon },
            LossName::Mse => LossKind::Mse,
        })
    }

    /// Records the loss between `sr` and `hr` on the graph.
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
        Ok(g.pixel_loss(self.kind()?, sr, hr)?)
    }
}

/// `l1`, `mse`, `charbonnier` or `charbonnier:<eps>`.
impl FromStr for LossConfig {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, eps) = match s.split_once(':') {
            Some((n, e)) => (n, Some(e)),
            None => (s, None),
        };
        let cfg = match (name.trim().to_ascii_lowercase().as_str(), eps) {
            ("l1", None) => LossConfig::l1(),
            ("mse", None) => LossConfig::mse(),
            ("charbonnier", None) => LossConfig::charbonnier(DEFAULT_CHARBONNIER_EPS),
            ("charbonnier", Some(e)) => LossConfig::charbonnier(
                e.trim().parse().map_err(|_| MetricError::Config(format!("bad epsilon {e:?}")))?,
            ),
            _ => return Err(MetricError::Config(format!("unknown loss {s:?}; expected l1, mse or charbonnier[:eps]"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for LossConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossName::L1 => f.write_str("l1"),
            LossName::Mse => f.write_str("mse"),
            LossName::Charbonnier => write!(f, "charbonnier:{:e}", self.epsilon),
        }
    }
}

pub fn l1_loss<T: Real>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    LossConfig::l1().apply(g, sr, hr)
}

pub fn charbonnier_loss<T: Real>(g: &mut Graph<T>, sr: Var, hr: Var, eps: f64) -> Result<Var> {
    LossConfig::charbonnier(eps).apply(g, sr, hr)
}

pub fn mse_loss<T: Real>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    LossConfig::mse().apply(g, sr, hr)
}

/// Evaluates a loss on plain tensors without recording gradients.
pub fn loss_value<T: Real>(cfg: &LossConfig, sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(sr.clone()), g.constant(hr.clone()));
    let l = cfg.apply(&mut g, a, b)?;
    Ok(g.value(l).data()[0].as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("l1".parse::<LossConfig>().unwrap(), LossConfig::l1());
        assert_eq!("MSE".parse::<LossConfig>().unwrap(), LossConfig::mse());
        assert_eq!("charbonnier".parse::<LossConfig>().unwrap().epsilon, 1e-9);
        assert_eq!("charbonnier:1e-6".parse::<LossConfig>().unwrap().epsilon, 1e-6);
        assert!("charbonnier:0".parse::<LossConfig>().is_err());
        assert!("huber".parse::<LossConfig>().is_err());
        let c = LossConfig::charbonnier(1e-9);
        assert_eq!(c.to_string().parse::<LossConfig>().unwrap(), c);
    }
}
