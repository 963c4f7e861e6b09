//! Finite-difference checks and small numeric helpers used by tests and by
//! the gradient verification command.

use crate::problem::{SampleProblem, StateSampler};

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        out[j] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Relative error `|a - b| / max(1, |b|)`, elementwise maximum over vectors.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in rel_error");
    a.iter()
        .zip(b)
        .map(|(ai, bi)| (ai - bi).abs() / bi.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Outcome of one finite-difference probe of a sampled function.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub function: usize,
    pub point: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: f64,
}

/// Compares analytic gradients of every `g_i(., s)` against central
/// differences at `points` interior points drawn from the domain, one fresh
/// state per point. Returns the worst probe per function.
pub fn check_gradients<P: SampleProblem>(
    problem: &P,
    points: usize,
    step: f64,
    sampler: &mut StateSampler,
) -> Result<Vec<GradientCheck>, crate::Error> {
    let funcs = problem.num_constraints() + 1;
    let mut worst: Vec<Option<GradientCheck>> = vec![None; funcs];
    for _ in 0..points {
        let x = problem.domain().sample_within(sampler)?;
        let s = problem.draw(sampler);
        for i in 0..funcs {
            let analytic = problem.gradient(i, &x, &s);
            let numeric = fd_gradient(|p| problem.value(i, p, &s), &x, step);
            let err = rel_error(&analytic, &numeric);
            let better = match &worst[i] {
                Some(w) => err > w.rel_error,
                None => true,
            };
            if better {
                worst[i] = Some(GradientCheck {
                    function: i,
                    point: x.clone(),
                    analytic,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(worst.into_iter().map(|w| w.expect("points must be positive")).collect())
}
