//! Finite-difference verification runs exposed through `hstkit gradcheck`.

use hstkit_model::{build, forward, predict, Bound, HSTConfig};
use hstkit_tensor::gradcheck::{check_gradients, GradCheckReport, FD_STEP};
use hstkit_tensor::{shifted_window_mask, AttentionParams, Graph, LossKind, Result, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instances per primitive.
pub const INSTANCES: u64 = 5;

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: String,
    pub instances: usize,
    pub elements: usize,
    pub max_rel_err: f64,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).expect("valid shape")
}

/// Contracts the output with small fixed random weights so every output
/// element contributes and the scalar stays near zero (FD roundoff scales
/// with the scalar's magnitude).
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, &mut rng).map(|v| 0.05 * v));
    let p = g.mul(y, w)?;
    g.sum(p)
}

#[derive(Default)]
struct Suite {
    rows: Vec<CheckRow>,
}

impl Suite {
    fn record(&mut self, name: &str, report: GradCheckReport) {
        match self.rows.iter_mut().find(|r| r.name == name) {
            Some(r) => {
                r.instances += 1;
                r.elements += report.checked;
                r.max_rel_err = r.max_rel_err.max(report.max_rel_err);
            }
            None => self.rows.push(CheckRow {
                name: name.to_string(),
                instances: 1,
                elements: report.checked,
                max_rel_err: report.max_rel_err,
            }),
        }
    }

    fn check(&mut self, name: &str, inputs: Vec<Tensor<f64>>, seed: u64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<()> {
        let report = check_gradients(&inputs, FD_STEP, |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        })?;
        self.record(name, report);
        Ok(())
    }
}

/// Every differentiable primitive on [`INSTANCES`] random small inputs.
pub fn primitive_checks() -> Result<Vec<CheckRow>> {
    let mut s = Suite::default();
    let mask = shifted_window_mask::<f64>(4, 4, 2, 1)?;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(&[2, 3], &mut rng), random(&[2, 3], &mut rng));
        s.check("add", vec![a.clone(), b.clone()], seed, |g, v| g.add(v[0], v[1]))?;
        s.check("sub", vec![a.clone(), b.clone()], seed, |g, v| g.sub(v[0], v[1]))?;
        s.check("mul", vec![a.clone(), b.clone()], seed, |g, v| g.mul(v[0], v[1]))?;
        s.check("scale", vec![a.clone()], seed, |g, v| g.scale(v[0], -1.7))?;
        s.check("sum", vec![a.clone()], seed, |g, v| {
            let m = g.sum(v[0])?;
            g.mul(m, m)
        })?;
        s.check("mean", vec![a.clone()], seed, |g, v| {
            let m = g.mean(v[0])?;
            g.mul(m, m)
        })?;
        s.check("add_broadcast", vec![a.clone(), random(&[3], &mut rng)], seed, |g, v| g.add_broadcast(v[0], v[1]))?;
        s.check("concat", vec![a.clone(), random(&[2, 2], &mut rng)], seed, |g, v| g.concat(&[v[0], v[1]], 1))?;
        s.check("reshape", vec![a], seed, |g, v| g.reshape(v[0], vec![3, 2]))?;

        let (k, stride, pad) = [(3, 1, 1), (3, 2, 1), (5, 2, 2), (1, 1, 0), (7, 1, 3)][seed as usize];
        let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let conv_in = vec![random(&[2, cin, 7, 6], &mut rng), random(&[cout, cin, k, k], &mut rng), random(&[cout], &mut rng)];
        s.check("conv2d", conv_in, seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad))?;

        let lin = vec![random(&[2, 3, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)];
        s.check("linear", lin, seed, |g, v| g.linear(v[0], v[1], Some(v[2])))?;
        let a3 = random(&[2, 3, 4], &mut rng);
        s.check("batch_matmul", vec![a3.clone(), random(&[2, 4, 5], &mut rng)], seed, |g, v| g.batch_matmul(v[0], v[1], false))?;
        s.check("batch_matmul_t", vec![a3, random(&[2, 5, 4], &mut rng)], seed, |g, v| g.batch_matmul(v[0], v[1], true))?;

        let x = random(&[3, 6], &mut rng).map(|v| 2.0 * v);
        let ln = vec![x.clone(), random(&[6], &mut rng), random(&[6], &mut rng)];
        s.check("layer_norm", ln, seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))?;
        s.check("gelu", vec![x.map(|v| 1.5 * v)], seed, |g, v| g.gelu(v[0]))?;
        s.check("softmax", vec![x.map(|v| 3.0 * v)], seed, |g, v| g.softmax(v[0]))?;

        let t = random(&[1, 4, 4, 2], &mut rng);
        s.check("window_partition", vec![t.clone()], seed, |g, v| g.window_partition(v[0], 2))?;
        s.check("window_reverse", vec![random(&[4, 2, 2, 2], &mut rng)], seed, |g, v| g.window_reverse(v[0], 2, 4, 4))?;
        s.check("cyclic_shift", vec![t.clone()], seed, |g, v| g.cyclic_shift(v[0], -1, 2))?;
        s.check("permute", vec![t], seed, |g, v| g.permute(v[0], &[0, 3, 1, 2]))?;
        let y = random(&[1, 8, 2, 3], &mut rng);
        s.check("pixel_shuffle", vec![y.clone()], seed, |g, v| g.pixel_shuffle(v[0], 2))?;
        s.check("pixel_unshuffle", vec![random(&[1, 2, 4, 6], &mut rng)], seed, |g, v| g.pixel_unshuffle(v[0], 2))?;
        s.check("reflect_pad", vec![y.clone()], seed, |g, v| g.reflect_pad(v[0], 1, 3, 2, 0))?;
        s.check("crop", vec![y], seed, |g, v| g.crop(v[0], 1, 1, 1, 2))?;
        s.check("relative_position_bias", vec![random(&[9, 2], &mut rng)], seed, |g, v| g.relative_position_bias(v[0], 2, 2))?;

        let c = 4;
        let attn = vec![
            random(&[4, 4, c], &mut rng),
            random(&[3 * c, c], &mut rng),
            random(&[3 * c], &mut rng),
            random(&[c, c], &mut rng),
            random(&[c], &mut rng),
            random(&[2, 4, 4], &mut rng),
        ];
        let masked = seed % 2 == 1;
        s.check("multi_head_attention", attn, seed, |g, v| {
            let p = AttentionParams {
                qkv_w: v[1],
                qkv_b: Some(v[2]),
                proj_w: v[3],
                proj_b: Some(v[4]),
            };
            g.multi_head_attention(v[0], &p, 2, v[5], masked.then_some(&mask))
        })?;

        let (p, q) = (random(&[2, 3, 2], &mut rng), random(&[2, 3, 2], &mut rng));
        for (name, kind) in [("l1", LossKind::L1), ("charbonnier", LossKind::Charbonnier { eps: 1e-9 }), ("mse", LossKind::Mse)] {
            let report = check_gradients(&[p.clone(), q.clone()], FD_STEP, |g, v| g.pixel_loss(kind, v[0], v[1]))?;
            s.record(&format!("loss_{name}"), report);
        }
    }
    Ok(s.rows)
}

/// Whole-network check on the reduced configuration (8 channels, window 4,
/// one RSTB of two STLs per branch, 1×3×8×8 input, Charbonnier loss).
pub fn model_check(seed: u64) -> Result<CheckRow> {
    let cfg = HSTConfig::tiny();
    let mut store = build::<f64>(&cfg, seed).map_err(|e| TensorError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    // perturb zero biases and unit norms so every path carries signal
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    let x = random(&[1, 3, 8, 8], &mut rng).map(|v| 0.5 + 0.5 * v);
    // target a small signed offset from the current output: the loss stays
    // small while gradients keep their L1-regime magnitude
    let sr0 = predict(&cfg, &store, &x).map_err(|e| TensorError::Config(e.to_string()))?;
    let offsets: Vec<f64> = sr0
        .data()
        .iter()
        .map(|v| v + if rng.random_bool(0.5) { 0.01 } else { -0.01 } * rng.random_range(0.5..1.5))
        .collect();
    let hr = Tensor::new(sr0.shape().to_vec(), offsets)?;
    inputs.push(x);
    let report = check_gradients(&inputs, FD_STEP, |g, vars| {
        let (params, x) = vars.split_at(vars.len() - 1);
        let p: Bound = names.iter().cloned().zip(params.iter().copied()).collect();
        let (sr, _) = forward(g, &p, &cfg, x[0]).map_err(|e| TensorError::Config(e.to_string()))?;
        let target = g.constant(hr.clone());
        g.pixel_loss(LossKind::Charbonnier { eps: 1e-6 }, sr, target)
    })?;
    Ok(CheckRow {
        name: "hst_reduced_end_to_end".into(),
        instances: 1,
        elements: report.checked,
        max_rel_err: report.max_rel_err,
    })
}
