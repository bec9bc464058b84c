//! Training stages, learning-rate schedules and the standard stage chains.

use std::path::PathBuf;

use hstkit_imaging::DegradationSpec;
use hstkit_metrics::{LossConfig, DEFAULT_CHARBONNIER_EPS};

use crate::error::{Result, TrainError};

/// One optimization stage. Iterations are counted from zero within the stage.
#[derive(Clone, Debug)]
pub struct TrainStage {
    pub name: String,
    pub degradation: DegradationSpec,
    pub loss: LossConfig,
    pub lr_initial: f64,
    /// Iterations at which the learning rate halves.
    pub lr_milestones: Vec<u64>,
    pub total_iters: u64,
    pub batch_size: usize,
    /// LR patch side; HR patches are `scale` times larger.
    pub patch: usize,
    pub augment: bool,
    /// Checkpoint of a previous stage to start from; `None` starts from a fresh build.
    pub init_from: Option<PathBuf>,
    /// Global gradient-norm clip; off by default.
    pub clip_grad: Option<f64>,
}

impl TrainStage {
    pub fn new(name: impl Into<String>, degradation: DegradationSpec, loss: LossConfig, lr: f64, total_iters: u64) -> Self {
        TrainStage {
            name: name.into(),
            degradation,
            loss,
            lr_initial: lr,
            lr_milestones: Vec::new(),
            total_iters,
            batch_size: 16,
            patch: 64,
            augment: true,
            init_from: None,
            clip_grad: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(format!("stage {:?}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\', ' ']) {
            return bad("name must be nonempty without spaces or path separators".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return bad(format!("lr_initial {} must be positive", self.lr_initial));
        }
        if !self.lr_milestones.windows(2).all(|w| w[0] < w[1]) {
            return bad(format!("milestones {:?} must be strictly increasing", self.lr_milestones));
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last >= self.total_iters {
                return bad(format!("milestone {last} is not below total_iters {}", self.total_iters));
            }
        }
        if self.batch_size == 0 || self.patch == 0 {
            return bad("batch_size and patch must be positive".into());
        }
        if let Some(c) = self.clip_grad {
            if !(c > 0.0) {
                return bad(format!("clip_grad {c} must be positive"));
            }
        }
        self.degradation.validate()?;
        self.loss.validate()?;
        Ok(())
    }

    /// `lr_initial · 0.5^k` with `k` the number of milestones at or before `iter`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let k = self.lr_milestones.iter().filter(|&&m| m <= iter).count();
        self.lr_initial * 0.5f64.powi(k as i32)
    }
}

/// ×4 bicubic pretraining: L1, 400K iterations, lr 2e-4 halved at 100K and 250K.
pub fn pretrain_stage() -> TrainStage {
    let mut s = TrainStage::new("pretrain", DegradationSpec::bicubic(4), LossConfig::l1(), 2e-4, 400_000);
    s.lr_milestones = vec![100_000, 250_000];
    s
}

/// Compressed finetuning at `quality`. Q=40 starts from pretraining
/// (lr 1e-4, 200K iterations, halved at 100K); other qualities start from
/// the Q=40 result (lr 8e-5, 100K iterations).
pub fn finetune_stage(quality: u8) -> TrainStage {
    let spec = DegradationSpec::compressed(4, quality);
    let loss = LossConfig::charbonnier(DEFAULT_CHARBONNIER_EPS);
    let name = format!("finetune-q{quality}");
    if quality == 40 {
        let mut s = TrainStage::new(name, spec, loss, 1e-4, 200_000);
        s.lr_milestones = vec![100_000];
        s
    } else {
        TrainStage::new(name, spec, loss, 8e-5, 100_000)
    }
}

/// Stages needed to reach a model for `quality`, in execution order; each
/// stage initializes from its predecessor's final checkpoint.
pub fn stage_chain(quality: u8) -> Vec<TrainStage> {
    let mut chain = vec![pretrain_stage(), finetune_stage(40)];
    if quality != 40 {
        chain.push(finetune_stage(quality));
    }
    chain
}

/// Multiplies every iteration count in the stage by `factor` (at least one
/// iteration is kept), dropping milestones that collapse together.
pub fn scaled(stage: &TrainStage, factor: f64) -> TrainStage {
    let mut s = stage.clone();
    let scale = |n: u64| ((n as f64 * factor).round() as u64).max(1);
    s.total_iters = scale(stage.total_iters);
    s.lr_milestones = stage.lr_milestones.iter().map(|&m| scale(m)).filter(|&m| m < s.total_iters).collect();
    s.lr_milestones.dedup();
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_schedule_values() {
        let s = pretrain_stage();
        assert_eq!(s.lr_at(0), 2e-4);
        assert_eq!(s.lr_at(99_999), 2e-4);
        assert_eq!(s.lr_at(100_000), 1e-4);
        assert_eq!(s.lr_at(250_000), 5e-5);
        assert_eq!(s.lr_at(399_999), 5e-5);
        let q40 = finetune_stage(40);
        assert_eq!((q40.lr_at(0), q40.lr_at(100_000), q40.total_iters), (1e-4, 5e-5, 200_000));
        let q10 = finetune_stage(10);
        assert_eq!((q10.lr_at(0), q10.lr_at(99_999), q10.total_iters), (8e-5, 8e-5, 100_000));
        for s in stage_chain(10) {
            s.validate().unwrap();
        }
    }

    #[test]
    fn constant_without_milestones() {
        let s = TrainStage::new("s", DegradationSpec::bicubic(4), LossConfig::l1(), 3e-4, 50);
        assert!((0..50).all(|i| s.lr_at(i) == 3e-4));
    }

    #[test]
    fn invalid_stages_rejected() {
        let mut s = pretrain_stage();
        s.lr_milestones = vec![250_000, 100_000];
        assert!(s.validate().is_err());
        let mut s = pretrain_stage();
        s.lr_milestones = vec![400_000];
        assert!(s.validate().is_err());
        let mut s = pretrain_stage();
        s.lr_initial = 0.0;
        assert!(s.validate().is_err());
        let mut s = pretrain_stage();
        s.name = "a b".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn scaling_keeps_structure() {
        let s = scaled(&pretrain_stage(), 1e-3);
        assert_eq!((s.total_iters, s.lr_milestones.clone()), (400, vec![100, 250]));
        s.validate().unwrap();
        let tiny = scaled(&pretrain_stage(), 1e-6);
        assert_eq!(tiny.total_iters, 1);
        assert!(tiny.lr_milestones.is_empty());
    }
}
