//! Sample-average approximation baseline.
//!
//! Freezing a batch of draws turns a stochastic problem into a
//! deterministic one whose functions are plain averages over the batch,
//! and deterministic SCA on that average is the classical yardstick for
//! the online solver. The wrapper keeps the original convex/nonconvex
//! split, so structured surrogates behave on the average exactly as they
//! do on the live problem.

use crate::driver::{run_deterministic_sca, DriverError, RunConfig, RunTrace};
use crate::problem::{Domain, SampleProblem, StateSampler};
use crate::Error;

/// A problem with its randomness replaced by a fixed list of draws. The
/// state type collapses to `()` because nothing is left to sample.
pub struct FrozenSamples<'p, P: SampleProblem> {
    inner: &'p P,
    states: Vec<P::State>,
}

impl<'p, P: SampleProblem> FrozenSamples<'p, P> {
    pub fn new(inner: &'p P, states: Vec<P::State>) -> Result<Self, Error> {
        if states.is_empty() {
            return Err(Error::InvalidParam("need at least one frozen draw".into()));
        }
        Ok(FrozenSamples { inner, states })
    }

    /// Freezes `n` fresh draws from `sampler`.
    pub fn freeze(inner: &'p P, n: usize, sampler: &mut StateSampler) -> Result<Self, Error> {
        let states = (0..n).map(|_| inner.draw(sampler)).collect();
        FrozenSamples::new(inner, states)
    }

    fn mean(&self, f: impl Fn(&P::State) -> f64) -> f64 {
        self.states.iter().map(f).sum::<f64>() / self.states.len() as f64
    }

    fn mean_vec(&self, f: impl Fn(&P::State) -> Vec<f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.inner.dim()];
        for s in &self.states {
            for (a, v) in acc.iter_mut().zip(f(s)) {
                *a += v;
            }
        }
        let scale = 1.0 / self.states.len() as f64;
        for a in acc.iter_mut() {
            *a *= scale;
        }
        acc
    }
}

impl<P: SampleProblem> SampleProblem for FrozenSamples<'_, P> {
    type State = ();

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }

    fn domain(&self) -> &Domain {
        self.inner.domain()
    }

    fn draw(&self, _sampler: &mut StateSampler) -> Self::State {}

    fn value(&self, i: usize, x: &[f64], _s: &()) -> f64 {
        self.mean(|s| self.inner.value(i, x, s))
    }

    fn gradient(&self, i: usize, x: &[f64], _s: &()) -> Vec<f64> {
        self.mean_vec(|s| self.inner.gradient(i, x, s))
    }

    fn has_split(&self, i: usize) -> bool {
        self.inner.has_split(i)
    }

    fn convex_value(&self, i: usize, x: &[f64], _s: &()) -> f64 {
        self.mean(|s| self.inner.convex_value(i, x, s))
    }

    fn convex_gradient(&self, i: usize, x: &[f64], _s: &()) -> Vec<f64> {
        self.mean_vec(|s| self.inner.convex_gradient(i, x, s))
    }

    fn nonconvex_value(&self, i: usize, x: &[f64], _s: &()) -> f64 {
        self.mean(|s| self.inner.nonconvex_value(i, x, s))
    }

    fn nonconvex_gradient(&self, i: usize, x: &[f64], _s: &()) -> Vec<f64> {
        self.mean_vec(|s| self.inner.nonconvex_gradient(i, x, s))
    }
}

/// Deterministic SCA on the `n`-sample average of `problem`, started at
/// `x0`. The frozen draws come from the config seed, so the baseline is
/// reproducible alongside the online runs it is compared against.
pub fn saa_sca_baseline<P: SampleProblem>(
    problem: &P,
    n: usize,
    config: &RunConfig,
    x0: &[f64],
) -> Result<RunTrace, DriverError> {
    let mut sampler = StateSampler::new(config.seed);
    let frozen = FrozenSamples::freeze(problem, n, &mut sampler)?;
    run_deterministic_sca(&frozen, x0, config)
}
