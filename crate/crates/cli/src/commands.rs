//! Implementations of the `hstkit` verbs. Each returns what it printed so
//! callers and tests can inspect results without parsing stdout.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use hstkit_imaging::{degrade_seeded, load_png, save_png, DegradationSpec, Image};
use hstkit_model::{count_for_config, Checkpoint, HSTConfig};
use hstkit_tensor::gradcheck::FD_TOLERANCE;
use hstkit_tensor::Real;
use hstkit_train::{
    evaluate, infer, run_stage, self_ensemble_infer, EvalReport, HstModel, PairDataset, TrainError, TrainState, Upscaler,
};
use rayon::prelude::*;

use crate::config::{Experiment, InitFrom, Precision};
use crate::dataset::{png_files, DatasetIndex};
use crate::error::{contract, usage, CliError, Result};
use crate::gradsuite::{model_check, primitive_checks, CheckRow};
use crate::provenance::{self, sha256_hex};

/// Target parameter budgets of the three presets.
pub const TARGET_COUNTS: [(&str, f64); 3] = [("hst1", 11.90e6), ("hst2", 12.98e6), ("hst3", 16.58e6)];
pub const COUNT_TOLERANCE: f64 = 0.05;

// ---------------------------------------------------------------- degrade

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub rel: String,
    /// `Ok(sha256 of the written PNG)` or the per-file error.
    pub result: std::result::Result<String, String>,
}

#[derive(Clone, Debug)]
pub struct DegradeSummary {
    pub spec_hash: String,
    pub rows: Vec<ManifestRow>,
}

impl DegradeSummary {
    pub fn manifest(&self, spec: &DegradationSpec) -> String {
        let mut out = format!("# spec: {}\n# spec_sha256: {}\n", spec.describe(), self.spec_hash);
        for r in &self.rows {
            match &r.result {
                Ok(h) => out += &format!("{}\t{}\t{}\n", r.rel, self.spec_hash, h),
                Err(e) => out += &format!("{}\t{}\terror: {}\n", r.rel, self.spec_hash, e.replace(['\n', '\t'], " ")),
            }
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }
}

fn degrade_one(input: &Path, output: &Path, spec: &DegradationSpec, seed: u64) -> std::result::Result<String, String> {
    let hr = load_png(input).map_err(|e| e.to_string())?;
    let s = spec.scale;
    let (w, h) = (hr.width() / s * s, hr.height() / s * s);
    if w == 0 || h == 0 {
        return Err(format!("{}x{} is smaller than the scale factor", hr.width(), hr.height()));
    }
    let hr = hr.to_rgb().crop(0, 0, w, h).map_err(|e| e.to_string())?;
    let lr = degrade_seeded(&hr, spec, seed).map_err(|e| e.to_string())?;
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    }
    save_png(&lr, output).map_err(|e| e.to_string())?;
    let bytes = std::fs::read(output).map_err(|e| e.to_string())?;
    Ok(sha256_hex(&bytes))
}

/// Degrades every PNG under `input` into the same relative path under `out`
/// and writes `manifest.tsv`. File `i` (in sorted order) seeds its random
/// stages with `seed + i`. Per-file failures are recorded and skipped.
pub fn degrade_tree(input: &Path, out: &Path, spec: &DegradationSpec, seed: u64) -> Result<DegradeSummary> {
    spec.validate().map_err(usage)?;
    let rels = png_files(input)?;
    std::fs::create_dir_all(out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    let rows: Vec<ManifestRow> = rels
        .par_iter()
        .enumerate()
        .map(|(i, rel)| ManifestRow {
            rel: rel.clone(),
            result: degrade_one(&input.join(rel), &out.join(rel), spec, seed.wrapping_add(i as u64)),
        })
        .collect();
    let summary = DegradeSummary {
        spec_hash: sha256_hex(format!("{};seed={seed}", spec.describe()).as_bytes()),
        rows,
    };
    let manifest = out.join("manifest.tsv");
    std::fs::write(&manifest, summary.manifest(spec)).map_err(|e| contract(format!("{}: {e}", manifest.display())))?;
    let args = BTreeMap::from([
        ("input".to_string(), input.display().to_string()),
        ("spec".to_string(), spec.describe()),
        ("seed".to_string(), seed.to_string()),
    ]);
    provenance::write(out, "degrade", &args, None)?;
    for r in &summary.rows {
        if let Err(e) = &r.result {
            log::error!("{}: {e}", r.rel);
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------- models

fn checkpoint_dtype(path: &Path) -> Result<String> {
    let mut head = [0u8; 64];
    let mut f = std::fs::File::open(path).map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))?;
    let n = f.read(&mut head).map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))?;
    let text = String::from_utf8_lossy(&head[..n]);
    text.lines()
        .nth(1)
        .and_then(|l| l.strip_prefix("dtype "))
        .map(str::to_string)
        .ok_or_else(|| contract(format!("{} is not a checkpoint", path.display())))
}

/// Loads a checkpoint as a model in the precision it was saved in.
pub fn load_model(path: &Path) -> Result<Box<dyn Upscaler>> {
    fn typed<T: Real>(path: &Path) -> Result<Box<dyn Upscaler>> {
        let ckpt = Checkpoint::<T>::load(path).map_err(contract)?;
        Ok(Box::new(HstModel {
            config: ckpt.config,
            params: ckpt.params,
        }))
    }
    match checkpoint_dtype(path)?.as_str() {
        "f64" => typed::<f64>(path),
        _ => typed::<f32>(path),
    }
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    /// `(stage, final checkpoint)` in execution order.
    pub finals: Vec<(String, PathBuf)>,
    pub test_report: Option<EvalReport>,
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("iter_") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    found.pop()
}

fn run_experiment<T: Real>(exp: &Experiment, train: &[(String, Image)], val: Option<&[(String, Image)]>) -> Result<TrainSummary> {
    let mut summary = TrainSummary::default();
    let mut previous: Option<PathBuf> = None;
    for (stage, init) in &exp.stages {
        let dir = exp.out_dir.join(&stage.name);
        let final_path = dir.join("final.ckpt");
        if final_path.is_file() {
            log::info!("{}: already complete, reusing {}", stage.name, final_path.display());
            previous = Some(final_path.clone());
            summary.finals.push((stage.name.clone(), final_path));
            continue;
        }
        let mut stage = stage.clone();
        stage.init_from = match init {
            InitFrom::Fresh => None,
            InitFrom::Previous => Some(previous.clone().ok_or_else(|| usage(format!("{}: previous stage produced no checkpoint", stage.name)))?),
            InitFrom::Checkpoint(p) => Some(p.clone()),
        };
        let mut state = match latest_checkpoint(&dir) {
            Some(p) => {
                log::info!("{}: resuming from {}", stage.name, p.display());
                let st = TrainState::<T>::from_checkpoint(Checkpoint::load(&p).map_err(contract)?).map_err(contract)?;
                if st.config != exp.model || st.stage != stage.name {
                    return Err(usage(format!("{} belongs to a different experiment", p.display())));
                }
                st
            }
            None => TrainState::<T>::for_stage(exp.model.clone(), &stage, exp.seed).map_err(contract)?,
        };
        let data = PairDataset::degrade(train.to_vec(), &stage.degradation, exp.seed).map_err(contract)?;
        let val_pairs = match val {
            Some(v) => PairDataset::degrade(v.to_vec(), &stage.degradation, exp.seed ^ 0x7a1).map_err(contract)?.pairs().to_vec(),
            None => Vec::new(),
        };
        let report = run_stage(&stage, &mut state, &data, &val_pairs, &exp.run).map_err(|e| match e {
            TrainError::NonFinite { .. } => contract(e),
            other => contract(other),
        })?;
        let fin = report.final_checkpoint.ok_or_else(|| contract(format!("{}: no final checkpoint written", stage.name)))?;
        previous = Some(fin.clone());
        summary.finals.push((stage.name.clone(), fin));
    }
    Ok(summary)
}

/// Runs every stage of the experiment, resuming interrupted stages and
/// skipping finished ones, then scores the final model on the test set.
pub fn train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<TrainSummary> {
    let mut exp = Experiment::load(config)?;
    if let Some(s) = seed {
        exp.seed = s;
        exp.run.seed = s;
    }
    if let Some(o) = out {
        exp.out_dir = o.to_path_buf();
        exp.run.out_dir = Some(o.to_path_buf());
    }
    let index = DatasetIndex::build(&exp.train_dir)?;
    if index.is_empty() {
        return Err(usage(format!("no decodable PNG under {}", exp.train_dir.display())));
    }
    let train_hr = index.load()?;
    let val_hr = exp.val_dir.as_ref().map(|d| DatasetIndex::build(d).and_then(|i| i.load())).transpose()?;
    let args = BTreeMap::from([
        ("config".to_string(), config.display().to_string()),
        ("seed".to_string(), exp.seed.to_string()),
        ("train_images".to_string(), index.len().to_string()),
    ]);
    provenance::write(&exp.out_dir, "train", &args, Some(&exp.source))?;
    let mut summary = match exp.precision {
        Precision::F32 => run_experiment::<f32>(&exp, &train_hr, val_hr.as_deref())?,
        Precision::F64 => run_experiment::<f64>(&exp, &train_hr, val_hr.as_deref())?,
    };
    if let (Some(test), Some((_, last))) = (&exp.test_dir, summary.finals.last()) {
        let spec = &exp.stages.last().expect("nonempty").0.degradation;
        let model = load_model(last)?;
        let images = DatasetIndex::build(test)?.load()?;
        let report = evaluate(model.as_ref(), &images, spec, false, exp.seed).map_err(contract)?;
        let path = exp.out_dir.join("test_eval.tsv");
        std::fs::write(&path, report.to_tsv()).map_err(|e| contract(format!("{}: {e}", path.display())))?;
        summary.test_report = Some(report);
    }
    Ok(summary)
}

// ---------------------------------------------------------------- eval / infer

pub fn eval(checkpoint: &Path, input: &Path, spec: &DegradationSpec, ensemble: bool, seed: u64, out: Option<&Path>) -> Result<EvalReport> {
    spec.validate().map_err(usage)?;
    let model = load_model(checkpoint)?;
    let index = DatasetIndex::build(input)?;
    if index.is_empty() {
        return Err(usage(format!("no decodable PNG under {}", input.display())));
    }
    let images = index.load()?;
    let report = evaluate(model.as_ref(), &images, spec, ensemble, seed).map_err(contract)?;
    if let Some(dir) = out {
        let args = BTreeMap::from([
            ("checkpoint".to_string(), checkpoint.display().to_string()),
            ("input".to_string(), input.display().to_string()),
            ("spec".to_string(), spec.describe()),
            ("ensemble".to_string(), ensemble.to_string()),
            ("seed".to_string(), seed.to_string()),
        ]);
        provenance::write(dir, "eval", &args, None)?;
        let path = dir.join("eval.tsv");
        std::fs::write(&path, report.to_tsv()).map_err(|e| contract(format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

pub fn infer_file(checkpoint: &Path, input: &Path, output: &Path, ensemble: bool) -> Result<Image> {
    let model = load_model(checkpoint)?;
    let lr = load_png(input).map_err(usage)?;
    let sr = if ensemble { self_ensemble_infer(model.as_ref(), &lr) } else { infer(model.as_ref(), &lr) }.map_err(contract)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| contract(format!("{}: {e}", dir.display())))?;
        let args = BTreeMap::from([
            ("checkpoint".to_string(), checkpoint.display().to_string()),
            ("input".to_string(), input.display().to_string()),
            ("ensemble".to_string(), ensemble.to_string()),
        ]);
        provenance::write(dir, "infer", &args, None)?;
    }
    save_png(&sr, output).map_err(contract)?;
    Ok(sr)
}

// ---------------------------------------------------------------- params

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsRow {
    pub preset: String,
    pub count: usize,
    /// Target budget and whether the count is within tolerance of it.
    pub target: Option<(f64, bool)>,
}

impl ParamsRow {
    pub fn line(&self) -> String {
        let mut s = format!("{}\t{}\t{:.2}M", self.preset, self.count, self.count as f64 / 1e6);
        if let Some((p, ok)) = self.target {
            let dev = 100.0 * (self.count as f64 - p) / p;
            s += &format!("\ttarget {:.2}M\t{dev:+.2}%\t{}", p / 1e6, if ok { "PASS" } else { "FAIL" });
        }
        s
    }
}

/// Parameter counts of the named presets (all three when `None`).
pub fn params(preset: Option<&str>) -> Result<Vec<ParamsRow>> {
    let names: Vec<String> = match preset {
        Some(p) => vec![p.to_string()],
        None => TARGET_COUNTS.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let mut rows = Vec::new();
    for name in names {
        let cfg = HSTConfig::from_preset(&name).map_err(usage)?;
        let count = count_for_config(&cfg).map_err(usage)?;
        let target = TARGET_COUNTS
            .iter()
            .find(|(n, _)| HSTConfig::from_preset(n).ok().as_ref() == Some(&cfg))
            .map(|&(_, p)| (p, (count as f64 - p).abs() <= COUNT_TOLERANCE * p));
        rows.push(ParamsRow {
            preset: name,
            count,
            target,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scope {
    Op,
    Model,
    All,
}

pub fn gradcheck(scope: Scope, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    if matches!(scope, Scope::Op | Scope::All) {
        rows.extend(primitive_checks().map_err(contract)?);
    }
    if matches!(scope, Scope::Model | Scope::All) {
        rows.push(model_check(seed).map_err(contract)?);
    }
    Ok(rows)
}

pub fn check_line(r: &CheckRow) -> String {
    let ok = r.max_rel_err <= FD_TOLERANCE;
    format!(
        "{:<26}\tinstances={}\telements={}\tmax_rel_err={:.3e}\t{}",
        r.name,
        r.instances,
        r.elements,
        r.max_rel_err,
        if ok { "PASS" } else { "FAIL" }
    )
}

/// Fails with a contract error naming the rows above tolerance.
pub fn require_all_pass(rows: &[CheckRow]) -> Result<()> {
    let failed: Vec<&str> = rows.iter().filter(|r| r.max_rel_err > FD_TOLERANCE).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Contract(format!("gradient check failed for {}", failed.join(", "))))
    }
}
