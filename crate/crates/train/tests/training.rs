use hstkit_imaging::{DegradationSpec, Image};
use hstkit_metrics::LossConfig;
use hstkit_model::{Checkpoint, HSTConfig};
use hstkit_train::{run_stage, score_pairs, PairDataset, RunOptions, TrainError, TrainStage, TrainState};

fn smooth(w: usize, h: usize, seed: usize) -> Image {
    let s = seed as f64;
    Image::from_fn(w, h, 3, |x, y, c| {
        let v = 128.0 + 60.0 * ((x as f64 * 0.21 + s).sin() + (y as f64 * 0.17 + c as f64).cos()) * 0.9;
        v.round() as u8
    })
    .unwrap()
}

fn data(spec: &DegradationSpec) -> PairDataset {
    let hr = (0..3).map(|i| (format!("img{i}"), smooth(48, 48, i))).collect();
    PairDataset::degrade(hr, spec, 0).unwrap()
}

fn stage(name: &str, spec: DegradationSpec, iters: u64) -> TrainStage {
    let mut s = TrainStage::new(name, spec, LossConfig::charbonnier(1e-9), 1e-3, iters);
    s.batch_size = 2;
    s.patch = 8;
    s.lr_milestones = if iters > 10 { vec![iters / 2] } else { vec![] };
    s
}

fn small() -> HSTConfig {
    HSTConfig {
        channels: vec![4, 4, 4],
        ..HSTConfig::tiny()
    }
}

#[test]
fn zero_iterations_returns_input_checkpoint() {
    let spec = DegradationSpec::bicubic(4);
    let st = stage("warm", spec.clone(), 0);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() };
    let mut state = TrainState::<f32>::fresh(small(), "warm", 3).unwrap();
    let before = state.clone();
    let report = run_stage(&st, &mut state, &data(&spec), &[], &opts).unwrap();
    assert_eq!(state, before);
    let ckpt = Checkpoint::<f32>::load(report.final_checkpoint.unwrap()).unwrap();
    assert_eq!(ckpt.params, before.params);
}

#[test]
fn fixed_seed_runs_are_bitwise_identical_and_resumable() {
    let spec = DegradationSpec::compressed(4, 30);
    let d = data(&spec);
    let st = stage("s", spec, 100);
    let opts = RunOptions { seed: 11, ..RunOptions::default() };

    let mut a = TrainState::<f64>::fresh(small(), "s", 1).unwrap();
    let ra = run_stage(&st, &mut a, &d, &[], &opts).unwrap();
    let mut b = TrainState::<f64>::fresh(small(), "s", 1).unwrap();
    run_stage(&st, &mut b, &d, &[], &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iteration, 100);
    assert_eq!(a.adam.step, 100);
    assert!(ra.last_loss.unwrap().is_finite());

    // 37 steps, checkpoint to disk, reload, finish
    let dir = tempfile::tempdir().unwrap();
    let mut c = TrainState::<f64>::fresh(small(), "s", 1).unwrap();
    let partial = RunOptions { stop_after: Some(37), out_dir: Some(dir.path().into()), checkpoint_every: 37, ..opts.clone() };
    let rc = run_stage(&st, &mut c, &d, &[], &partial).unwrap();
    assert!(rc.final_checkpoint.is_none());
    let path = &rc.checkpoints[0];
    let mut resumed = TrainState::from_checkpoint(Checkpoint::<f64>::load(path).unwrap()).unwrap();
    assert_eq!(resumed.iteration, 37);
    run_stage(&st, &mut resumed, &d, &[], &opts).unwrap();
    assert_eq!(resumed, a);
}

#[test]
fn training_reduces_loss_and_logs() {
    let spec = DegradationSpec::bicubic(4);
    let d = data(&spec);
    let mut st = stage("fit", spec, 60);
    st.augment = false;
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { log_every: 10, val_every: 30, out_dir: Some(dir.path().into()), ..RunOptions::default() };
    let mut state = TrainState::<f32>::fresh(small(), "fit", 0).unwrap();
    let val = d.head(2).to_vec();
    let model0 = state.model();
    let before = score_pairs(&model0, val.iter().map(|p| (p.name.as_str(), &p.lr, &p.hr)), false).unwrap();
    let report = run_stage(&st, &mut state, &d, &val, &opts).unwrap();
    let after = score_pairs(&state.model(), val.iter().map(|p| (p.name.as_str(), &p.lr, &p.hr)), false).unwrap();
    assert!(after.mean_psnr > before.mean_psnr, "{} -> {}", before.mean_psnr, after.mean_psnr);
    assert_eq!(report.records.len(), 6);
    assert!(report.records[2].val_psnr.is_some());
    let log = std::fs::read_to_string(dir.path().join("fit/metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.lines().last().unwrap().starts_with("iter=60 lr=5e-4 loss="));
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let spec = DegradationSpec::bicubic(4);
    let mut state = TrainState::<f32>::fresh(small(), "nan", 0).unwrap();
    state.params.get_mut("recon.out.bias").unwrap().data_mut()[0] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() };
    match run_stage(&stage("nan", spec.clone(), 5), &mut state, &data(&spec), &[], &opts) {
        Err(TrainError::NonFinite { iteration: 0, dump: Some(path), .. }) => {
            assert_eq!(std::fs::read_dir(path).unwrap().count(), 4);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(state.iteration, 0);
}

#[test]
fn mismatched_dataset_or_stage_rejected() {
    let mut state = TrainState::<f32>::fresh(small(), "a", 0).unwrap();
    let d = data(&DegradationSpec::bicubic(4));
    let err = run_stage(&stage("a", DegradationSpec::compressed(4, 10), 1), &mut state, &d, &[], &RunOptions::default());
    assert!(matches!(err, Err(TrainError::Config(_))));
    let err = run_stage(&stage("b", DegradationSpec::bicubic(4), 1), &mut state, &d, &[], &RunOptions::default());
    assert!(matches!(err, Err(TrainError::Config(_))));
}

#[test]
fn finetune_chain_beats_its_pretrain_on_compressed_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let pre_spec = DegradationSpec::bicubic(4);
    let ft_spec = DegradationSpec::compressed(4, 40);
    let opts = RunOptions { seed: 3, out_dir: Some(dir.path().into()), ..RunOptions::default() };

    let pre = stage("pretrain", pre_spec.clone(), 150);
    let mut state = TrainState::<f32>::for_stage(cfg.clone(), &pre, 0).unwrap();
    let r = run_stage(&pre, &mut state, &data(&pre_spec), &[], &opts).unwrap();

    let mut ft = stage("finetune-q40", ft_spec.clone(), 100);
    ft.init_from = r.final_checkpoint.clone();
    let ft_data = data(&ft_spec);
    let mut tuned = TrainState::<f32>::for_stage(cfg.clone(), &ft, 0).unwrap();
    assert_eq!(tuned.params, state.params);
    assert_eq!(tuned.adam.step, 0);
    run_stage(&ft, &mut tuned, &ft_data, &[], &opts).unwrap();

    let hr: Vec<(String, Image)> = (10..13).map(|i| (format!("v{i}"), smooth(32, 32, i))).collect();
    let val = PairDataset::degrade(hr, &ft_spec, 99).unwrap();
    let triples = || val.pairs().iter().map(|p| (p.name.as_str(), &p.lr, &p.hr));
    let p_pre = score_pairs(&state.model(), triples(), false).unwrap().mean_psnr;
    let p_ft = score_pairs(&tuned.model(), triples(), false).unwrap().mean_psnr;
    assert!(p_ft > p_pre, "finetuned {p_ft} vs pretrain-only {p_pre}");
}
