//! Experiment files: TOML with `[model]`, `[data]`, `[run]` sections and one
//! `[[stage]]` table per training stage. Relative paths resolve against the
//! directory holding the file.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/q10"
//! precision = "f32"
//!
//! [model]
//! preset = "hst3"
//!
//! [data]
//! train = "data/train"
//! val = "data/val"
//!
//! [[stage]]
//! preset = "pretrain"
//! iter_scale = 0.001
//!
//! [[stage]]
//! name = "finetune-q10"
//! quality = 10
//! loss = "charbonnier"
//! lr = 8e-5
//! iters = 100
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use hstkit_imaging::{DegradationSpec, Stage};
use hstkit_metrics::LossConfig;
use hstkit_model::HSTConfig;
use hstkit_train::{finetune_stage, pretrain_stage, scaled, RunOptions, TrainStage};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub channels: Option<Vec<usize>>,
    pub rstbs: Option<Vec<usize>>,
    pub stl_per_rstb: Option<usize>,
    pub window: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub checkpoint_every: Option<u64>,
    pub log_every: Option<u64>,
    pub val_every: Option<u64>,
    pub val_images: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    /// `pretrain` or `finetune-q<Q>`; explicit fields override it.
    pub preset: Option<String>,
    pub name: Option<String>,
    pub scale: Option<usize>,
    pub quality: Option<u8>,
    pub antialias: Option<bool>,
    /// Extra stages after JPEG: `blur:<σ>`, `noise:<σ>`, `jpeg:<Q>`, `hybrid`.
    pub extra: Option<Vec<String>>,
    pub loss: Option<String>,
    pub lr: Option<f64>,
    pub milestones: Option<Vec<u64>>,
    pub iters: Option<u64>,
    pub batch_size: Option<usize>,
    pub patch: Option<usize>,
    pub augment: Option<bool>,
    /// `previous` (default after the first stage), `none`, or a checkpoint path.
    pub init_from: Option<String>,
    pub clip_grad: Option<f64>,
    /// Multiplies iteration counts and milestones after all other fields apply.
    pub iter_scale: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub model: ModelSection,
    pub data: DataSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(rename = "stage")]
    pub stages: Vec<StageSection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitFrom {
    Fresh,
    Previous,
    Checkpoint(PathBuf),
}

/// A validated experiment with resolved paths.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub model: HSTConfig,
    pub train_dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
    pub stages: Vec<(TrainStage, InitFrom)>,
    pub run: RunOptions,
    /// The file as written, kept for provenance snapshots.
    pub source: String,
}

pub fn parse_extra(s: &str) -> Result<Stage> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = |what: &str| arg.trim().parse::<f64>().map_err(|_| usage(format!("extra stage {s:?}: bad {what}")));
    Ok(match kind.trim() {
        "blur" => Stage::Blur { sigma: num("sigma")? },
        "noise" => Stage::Noise { sigma: num("sigma")? },
        "jpeg" => Stage::Jpeg {
            quality: arg.trim().parse().map_err(|_| usage(format!("extra stage {s:?}: bad quality")))?,
        },
        "hybrid" if arg.is_empty() => Stage::RandomHybrid,
        _ => return Err(usage(format!("unknown extra stage {s:?}; expected blur:<σ>, noise:<σ>, jpeg:<Q> or hybrid"))),
    })
}

fn stage_preset(name: &str) -> Result<TrainStage> {
    if name == "pretrain" {
        return Ok(pretrain_stage());
    }
    name.strip_prefix("finetune-q")
        .and_then(|q| q.parse::<u8>().ok())
        .filter(|q| (1..=100).contains(q))
        .map(finetune_stage)
        .ok_or_else(|| usage(format!("unknown stage preset {name:?}; expected pretrain or finetune-q<Q>")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_model(m: &ModelSection) -> Result<HSTConfig> {
    let mut cfg = match &m.preset {
        Some(p) => HSTConfig::from_preset(p).map_err(usage)?,
        None => HSTConfig::default(),
    };
    if let Some(v) = &m.channels {
        cfg.channels = v.clone();
    }
    if let Some(v) = &m.rstbs {
        cfg.rstbs = v.clone();
    }
    cfg.stl_per_rstb = m.stl_per_rstb.unwrap_or(cfg.stl_per_rstb);
    cfg.window = m.window.unwrap_or(cfg.window);
    cfg.heads = m.heads.unwrap_or(cfg.heads);
    cfg.mlp_ratio = m.mlp_ratio.unwrap_or(cfg.mlp_ratio);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn build_stage(s: &StageSection, index: usize, base: &Path) -> Result<(TrainStage, InitFrom)> {
    let mut st = match &s.preset {
        Some(p) => stage_preset(p)?,
        None => {
            let name = s.name.clone().ok_or_else(|| usage(format!("stage {index} needs a name or a preset")))?;
            TrainStage::new(name, DegradationSpec::bicubic(4), LossConfig::l1(), 2e-4, 1000)
        }
    };
    if let Some(n) = &s.name {
        st.name = n.clone();
    }
    let d = &mut st.degradation;
    d.scale = s.scale.unwrap_or(d.scale);
    if s.quality.is_some() {
        d.jpeg_quality = s.quality;
    }
    d.antialias = s.antialias.unwrap_or(d.antialias);
    if let Some(extra) = &s.extra {
        d.extra_stages = extra.iter().map(|e| parse_extra(e)).collect::<Result<_>>()?;
    }
    if let Some(l) = &s.loss {
        st.loss = l.parse().map_err(usage)?;
    }
    st.lr_initial = s.lr.unwrap_or(st.lr_initial);
    if let Some(m) = &s.milestones {
        st.lr_milestones = m.clone();
    }
    st.total_iters = s.iters.unwrap_or(st.total_iters);
    st.batch_size = s.batch_size.unwrap_or(st.batch_size);
    st.patch = s.patch.unwrap_or(st.patch);
    st.augment = s.augment.unwrap_or(st.augment);
    st.clip_grad = s.clip_grad.or(st.clip_grad);
    if let Some(f) = s.iter_scale {
        if !(f > 0.0 && f.is_finite()) {
            return Err(usage(format!("stage {}: iter_scale must be positive", st.name)));
        }
        st = scaled(&st, f);
    }
    let init = match s.init_from.as_deref() {
        None if index == 0 => InitFrom::Fresh,
        None | Some("previous") => InitFrom::Previous,
        Some("none") => InitFrom::Fresh,
        Some(path) => {
            let p = resolve(base, Path::new(path));
            if !p.is_file() {
                return Err(usage(format!("stage {}: init_from {} does not exist", st.name, p.display())));
            }
            InitFrom::Checkpoint(p)
        }
    };
    if index == 0 && init == InitFrom::Previous {
        return Err(usage("the first stage has no previous stage to initialize from"));
    }
    st.validate().map_err(usage)?;
    Ok((st, init))
}

impl Experiment {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| usage(format!("config: {e}")))?;
        let model = build_model(&file.model)?;
        if file.stages.is_empty() {
            return Err(usage("config defines no [[stage]]"));
        }
        let stages: Vec<(TrainStage, InitFrom)> =
            file.stages.iter().enumerate().map(|(i, s)| build_stage(s, i, base)).collect::<Result<_>>()?;
        let mut seen = HashSet::new();
        for (s, _) in &stages {
            if !seen.insert(s.name.clone()) {
                return Err(usage(format!("stage name {:?} is used twice", s.name)));
            }
        }
        let existing_dir = |p: &Path| -> Result<PathBuf> {
            let p = resolve(base, p);
            if p.is_dir() {
                Ok(p)
            } else {
                Err(usage(format!("data directory {} does not exist", p.display())))
            }
        };
        let defaults = RunOptions::default();
        let run = RunOptions {
            seed: file.seed,
            out_dir: Some(resolve(base, &file.out_dir)),
            checkpoint_every: file.run.checkpoint_every.unwrap_or(1000),
            log_every: file.run.log_every.unwrap_or(defaults.log_every),
            val_every: file.run.val_every.unwrap_or(1000),
            val_images: file.run.val_images.unwrap_or(defaults.val_images),
            stop_after: None,
        };
        Ok(Experiment {
            seed: file.seed,
            out_dir: resolve(base, &file.out_dir),
            precision: file.precision,
            model,
            train_dir: existing_dir(&file.data.train)?,
            val_dir: file.data.val.as_deref().map(existing_dir).transpose()?,
            test_dir: file.data.test.as_deref().map(existing_dir).transpose()?,
            stages,
            run,
            source: text.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}
