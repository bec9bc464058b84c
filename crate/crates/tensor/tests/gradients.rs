//! Finite-difference checks for every differentiable primitive.

use hstkit_tensor::gradcheck::{check_gradients, FD_STEP, FD_TOLERANCE};
use hstkit_tensor::{shifted_window_mask, AttentionParams, Graph, LossKind, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Contracts an arbitrary output with fixed random weights so every
/// element of the output contributes a distinct gradient.
///
/// Weights are small so the scalar stays near zero: rounding noise in the
/// central difference scales with |loss|, and some gradients (attention key
/// bias) are exactly zero.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, &mut rng).map(|v| 0.05 * v));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, seed: u64, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let report = check_gradients(&inputs, FD_STEP, |g, v| {
        let y = f(g, v)?;
        project(g, y, seed)
    })
    .unwrap();
    assert!(
        report.passed(FD_TOLERANCE),
        "{name} (instance {seed}): max rel err {:.3e}, worst {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn elementwise_and_reductions() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(&[2, 3], &mut rng), random(&[2, 3], &mut rng));
        check("add", vec![a.clone(), b.clone()], seed, |g, v| g.add(v[0], v[1]));
        check("sub", vec![a.clone(), b.clone()], seed, |g, v| g.sub(v[0], v[1]));
        check("mul", vec![a.clone(), b.clone()], seed, |g, v| g.mul(v[0], v[1]));
        check("scale", vec![a.clone()], seed, |g, v| g.scale(v[0], -1.7));
        check("mean", vec![a.clone()], seed, |g, v| {
            let m = g.mean(v[0])?;
            g.mul(m, m)
        });
        let bias = random(&[3], &mut rng);
        check("add_broadcast", vec![a.clone(), bias], seed, |g, v| g.add_broadcast(v[0], v[1]));
        let c = random(&[2, 2], &mut rng);
        check("concat", vec![a.clone(), c], seed, |g, v| g.concat(&[v[0], v[1]], 1));
        check("reshape", vec![a], seed, |g, v| g.reshape(v[0], vec![3, 2]));
    }
}

#[test]
fn conv2d() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, stride, pad) = [(3, 1, 1), (3, 2, 1), (5, 2, 2), (1, 1, 0), (7, 1, 3)][seed as usize];
        let cin = rng.random_range(1..=3);
        let cout = rng.random_range(1..=3);
        let x = random(&[2, cin, 7, 6], &mut rng);
        let w = random(&[cout, cin, k, k], &mut rng);
        let b = random(&[cout], &mut rng);
        check("conv2d", vec![x, w, b], seed, |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn linear_and_matmul() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 3, 4], &mut rng);
        let w = random(&[5, 4], &mut rng);
        let b = random(&[5], &mut rng);
        check("linear", vec![x, w, b], seed, |g, v| g.linear(v[0], v[1], Some(v[2])));
        let a = random(&[2, 3, 4], &mut rng);
        let bm = random(&[2, 4, 5], &mut rng);
        let bt = random(&[2, 5, 4], &mut rng);
        check("bmm", vec![a.clone(), bm], seed, |g, v| g.batch_matmul(v[0], v[1], false));
        check("bmm_t", vec![a, bt], seed, |g, v| g.batch_matmul(v[0], v[1], true));
    }
}

#[test]
fn normalization_and_activations() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 6], &mut rng).map(|v| 2.0 * v);
        let gamma = random(&[6], &mut rng);
        let beta = random(&[6], &mut rng);
        check("layer_norm", vec![x.clone(), gamma, beta], seed, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5));
        check("gelu", vec![x.map(|v| 1.5 * v)], seed, |g, v| g.gelu(v[0]));
        check("softmax", vec![x.map(|v| 3.0 * v)], seed, |g, v| g.softmax(v[0]));
    }
}

#[test]
fn rearrangements() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 4, 4, 2], &mut rng);
        check("window_partition", vec![x.clone()], seed, |g, v| g.window_partition(v[0], 2));
        check("window_reverse", vec![random(&[4, 2, 2, 2], &mut rng)], seed, |g, v| g.window_reverse(v[0], 2, 4, 4));
        check("cyclic_shift", vec![x.clone()], seed, |g, v| g.cyclic_shift(v[0], -1, 2));
        check("permute", vec![x.clone()], seed, |g, v| g.permute(v[0], &[0, 3, 1, 2]));
        let y = random(&[1, 8, 2, 3], &mut rng);
        check("pixel_shuffle", vec![y.clone()], seed, |g, v| g.pixel_shuffle(v[0], 2));
        check("pixel_unshuffle", vec![random(&[1, 2, 4, 6], &mut rng)], seed, |g, v| g.pixel_unshuffle(v[0], 2));
        check("reflect_pad", vec![y.clone()], seed, |g, v| g.reflect_pad(v[0], 1, 3, 2, 0));
        check("crop", vec![y], seed, |g, v| g.crop(v[0], 1, 1, 1, 2));
        check("relative_bias", vec![random(&[9, 2], &mut rng)], seed, |g, v| g.relative_position_bias(v[0], 2, 2));
    }
}

#[test]
fn windowed_attention() {
    let mask = shifted_window_mask::<f64>(4, 4, 2, 1).unwrap();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 4;
        let inputs = vec![
            random(&[4, 4, c], &mut rng),
            random(&[3 * c, c], &mut rng),
            random(&[3 * c], &mut rng),
            random(&[c, c], &mut rng),
            random(&[c], &mut rng),
            random(&[2, 4, 4], &mut rng),
        ];
        let masked = seed % 2 == 1;
        check("attention", inputs, seed, |g, v| {
            let p = AttentionParams {
                qkv_w: v[1],
                qkv_b: Some(v[2]),
                proj_w: v[3],
                proj_b: Some(v[4]),
            };
            g.multi_head_attention(v[0], &p, 2, v[5], masked.then_some(&mask))
        });
    }
}

#[test]
fn losses() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(&[2, 3, 2], &mut rng), random(&[2, 3, 2], &mut rng));
        for kind in [LossKind::L1, LossKind::Charbonnier { eps: 1e-9 }, LossKind::Mse] {
            let report = check_gradients(&[a.clone(), b.clone()], FD_STEP, |g, v| g.pixel_loss(kind, v[0], v[1])).unwrap();
            assert!(report.passed(FD_TOLERANCE), "{kind:?}: {report:?}");
        }
    }
}
