//! Central finite-difference verification of reverse-mode gradients (64-bit).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Default perturbation for central differences.
pub const FD_STEP: f64 = 1e-4;
/// Acceptance threshold on the maximum relative error.
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a-b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F, track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(track);
            g.leaf(t)
        })
        .collect();
    let loss = f(&mut g, &vars)?;
    Ok((g, vars, loss))
}

fn scalar_of<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, _, loss) = evaluate(inputs, f, false)?;
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(crate::TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0])
}

/// Compares `backward` against central differences for every element of
/// every input, where `f` maps the recorded inputs to a scalar.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, loss) = evaluate(inputs, &f, true)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("tracked leaf").to_vec())
        .collect();
    drop(g);

    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (e, &a) in grads.iter().enumerate() {
            let orig = probe[i].data()[e];
            probe[i].data_mut()[e] = orig + step;
            let plus = scalar_of(&probe, &f)?;
            probe[i].data_mut()[e] = orig - step;
            let minus = scalar_of(&probe, &f)?;
            probe[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some(Mismatch {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
