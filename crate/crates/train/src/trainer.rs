//! The optimization loop, metric log and checkpoint lifecycle.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use hstkit_imaging::save_png;
use hstkit_model::{build, forward, Checkpoint, HSTConfig, ParamStore};
use hstkit_tensor::{Graph, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{clip_grad_norm, AdamState};
use crate::data::{sample_batch, tensor_to_image, Batch, Pair, PairDataset};
use crate::error::{Result, TrainError};
use crate::infer::{score_pairs, HstModel};
use crate::stage::TrainStage;

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real = f32> {
    pub config: HSTConfig,
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    pub stage: String,
    /// Completed iterations of `stage`.
    pub iteration: u64,
}

impl<T: Real> TrainState<T> {
    /// Freshly initialized network at iteration 0 of `stage`.
    pub fn fresh(config: HSTConfig, stage: &str, seed: u64) -> Result<Self> {
        let params = build(&config, seed)?;
        Ok(Self::from_params(config, params, stage))
    }

    /// Starts `stage` from given weights with a fresh optimizer.
    pub fn from_params(config: HSTConfig, params: ParamStore<T>, stage: &str) -> Self {
        TrainState {
            adam: AdamState::new(&params),
            config,
            params,
            stage: stage.to_string(),
            iteration: 0,
        }
    }

    /// Initial state for `stage`: weights from `init_from` when set, else a seeded build.
    pub fn for_stage(config: HSTConfig, stage: &TrainStage, seed: u64) -> Result<Self> {
        match &stage.init_from {
            Some(path) => {
                let ckpt = Checkpoint::<T>::load(path)?;
                if ckpt.config != config {
                    return Err(TrainError::Config(format!(
                        "{} was trained with a different architecture",
                        path.display()
                    )));
                }
                Ok(Self::from_params(config, ckpt.params, &stage.name))
            }
            None => Self::fresh(config, &stage.name, seed),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let (state, mut meta) = self.adam.export();
        meta.insert("stage".into(), self.stage.clone());
        meta.insert("iteration".into(), self.iteration.to_string());
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            state,
            meta,
        }
    }

    /// Restores a state written by [`TrainState::to_checkpoint`].
    pub fn from_checkpoint(ckpt: Checkpoint<T>) -> Result<Self> {
        let meta = &ckpt.meta;
        let stage = meta.get("stage").cloned().ok_or_else(|| TrainError::Config("checkpoint has no stage".into()))?;
        let iteration = meta
            .get("iteration")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| TrainError::Config("checkpoint has no iteration".into()))?;
        let adam = AdamState::import(&ckpt.params, &ckpt.state, meta)?;
        Ok(TrainState {
            config: ckpt.config,
            params: ckpt.params,
            adam,
            stage,
            iteration,
        })
    }

    pub fn model(&self) -> HstModel<T> {
        HstModel {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!("iter={} lr={:e} loss={:.8}", self.iteration, self.lr, self.loss);
        if let (Some(p), Some(q)) = (self.val_psnr, self.val_ssim) {
            s += &format!(" val_psnr={p:.4} val_ssim={q:.6}");
        }
        s
    }
}

/// Run-level knobs that do not change the optimization trajectory.
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Seeds batch sampling; iteration `i` uses stream `i` of this seed.
    pub seed: u64,
    /// Stage checkpoints, the metric log and diagnostic dumps go under `<out_dir>/<stage>/`.
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub val_every: u64,
    /// Validation pairs used for periodic PSNR/SSIM.
    pub val_images: usize,
    /// Stop after this many iterations of the stage even if more remain.
    pub stop_after: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 0,
            out_dir: None,
            checkpoint_every: 0,
            log_every: 100,
            val_every: 0,
            val_images: 5,
            stop_after: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct StageReport {
    pub records: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    /// Loss of the last executed iteration.
    pub last_loss: Option<f64>,
}

/// Generator for the batch of iteration `iter`; independent of history so
/// resumed runs draw the same batches.
pub fn batch_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng
}

/// Forward, loss and backward on one batch; returns the loss and per-parameter gradients.
pub fn loss_and_grads<T: Real>(
    config: &HSTConfig,
    params: &ParamStore<T>,
    stage: &TrainStage,
    batch: &Batch<T>,
) -> Result<(f64, ParamStore<T>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, true);
    let x = g.constant(batch.lr.clone());
    let (sr, _) = forward(&mut g, &p, config, x)?;
    let hr = g.constant(batch.hr.clone());
    let loss = stage.loss.apply(&mut g, sr, hr)?;
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Ok((value, ParamStore::new()));
    }
    g.backward(loss)?;
    let mut grads = ParamStore::new();
    for (name, var) in p.iter() {
        if let Some(grad) = g.grad(var) {
            grads.insert(name, Tensor::new(g.shape(var).to_vec(), grad.to_vec())?)?;
        }
    }
    Ok((value, grads))
}

fn stage_dir(opts: &RunOptions, stage: &TrainStage) -> Option<PathBuf> {
    opts.out_dir.as_ref().map(|d| d.join(&stage.name))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn dump_batch<T: Real>(dir: &Path, iteration: u64, batch: &Batch<T>) -> Result<PathBuf> {
    let out = dir.join(format!("nonfinite-iter{iteration}"));
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let n = batch.samples.len();
    for (i, s) in batch.samples.iter().enumerate() {
        for (tag, t) in [("lr", &batch.lr), ("hr", &batch.hr)] {
            let per = t.numel() / n;
            let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
            let one = Tensor::new(vec![1, c, h, w], t.data()[i * per..(i + 1) * per].to_vec())?;
            let name = format!("{i:02}-pair{}-x{}-y{}-t{}-{tag}.png", s.pair, s.x, s.y, s.transform.index());
            save_png(&tensor_to_image(&one)?, out.join(name))?;
        }
    }
    Ok(out)
}

fn validate_on<T: Real>(state: &TrainState<T>, val: &[Pair]) -> Result<(f64, f64)> {
    let report = score_pairs(&state.model(), val.iter().map(|p| (p.name.as_str(), &p.lr, &p.hr)), false)?;
    Ok((report.mean_psnr, report.mean_ssim))
}

/// Runs `stage` from `state.iteration` to `stage.total_iters`.
///
/// Each iteration samples a batch from its own RNG stream, steps Adam at
/// `lr_at(iter)`, and logs, validates and checkpoints at the configured
/// intervals. A final checkpoint is written when an output directory is set.
pub fn run_stage<T: Real>(
    stage: &TrainStage,
    state: &mut TrainState<T>,
    data: &PairDataset,
    val: &[Pair],
    opts: &RunOptions,
) -> Result<StageReport> {
    stage.validate()?;
    if state.stage != stage.name {
        return Err(TrainError::Config(format!(
            "state belongs to stage {:?}, not {:?}",
            state.stage, stage.name
        )));
    }
    if data.scale() != stage.degradation.scale || data.description() != stage.degradation.describe() {
        return Err(TrainError::Config(format!(
            "dataset was generated with {:?}, stage expects {:?}",
            data.description(),
            stage.degradation.describe()
        )));
    }
    let dir = stage_dir(opts, stage);
    let mut log = match &dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(io_err(d))?;
            let path = d.join("metrics.log");
            Some(OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?)
        }
        None => None,
    };
    let val = &val[..opts.val_images.min(val.len())];
    let mut report = StageReport::default();
    let end = match opts.stop_after {
        Some(n) => stage.total_iters.min(n),
        None => stage.total_iters,
    };
    while state.iteration < end {
        let iter = state.iteration;
        let lr = stage.lr_at(iter);
        let mut rng = batch_rng(opts.seed, iter);
        let batch = sample_batch::<T>(data, stage.batch_size, stage.patch, stage.augment, &mut rng)?;
        let (loss, mut grads) = loss_and_grads(&state.config, &state.params, stage, &batch)?;
        if !loss.is_finite() {
            let dump = match &dir {
                Some(d) => Some(dump_batch(d, iter, &batch)?),
                None => None,
            };
            log::error!("non-finite loss at iteration {iter}; samples {:?}", batch.samples);
            return Err(TrainError::NonFinite {
                iteration: iter,
                loss,
                dump,
            });
        }
        if let Some(c) = stage.clip_grad {
            clip_grad_norm(&mut grads, c);
        }
        state.adam.step(&mut state.params, &grads, lr)?;
        state.iteration += 1;
        report.last_loss = Some(loss);

        let done = state.iteration;
        let due = |every: u64| every > 0 && done % every == 0;
        let (mut vp, mut vs) = (None, None);
        if due(opts.val_every) && !val.is_empty() {
            let (p, s) = validate_on(state, val)?;
            (vp, vs) = (Some(p), Some(s));
        }
        if due(opts.log_every) || vp.is_some() || done == end {
            let rec = LogRecord {
                iteration: done,
                lr,
                loss,
                val_psnr: vp,
                val_ssim: vs,
            };
            log::info!("{}: {}", stage.name, rec.to_line());
            if let Some(f) = &mut log {
                writeln!(f, "{}", rec.to_line()).map_err(io_err(Path::new("metrics.log")))?;
            }
            report.records.push(rec);
        }
        if let (Some(d), true) = (&dir, due(opts.checkpoint_every)) {
            let path = d.join(format!("iter_{done:08}.ckpt"));
            state.to_checkpoint().save(&path)?;
            report.checkpoints.push(path);
        }
    }
    if let Some(d) = &dir {
        if state.iteration >= stage.total_iters {
            let path = d.join("final.ckpt");
            let mut ckpt = state.to_checkpoint();
            ckpt.meta.insert("complete".into(), "true".into());
            ckpt.save(&path)?;
            report.final_checkpoint = Some(path);
        }
    }
    Ok(report)
}

