//! The outer iteration: sample, refresh surrogates, solve the selected
//! subproblem, and smooth the iterate.
//!
//! Iteration `t` draws a batch of states, updates every surrogate with
//! weight `rho_t` around the current iterate, and solves the feasibility
//! subproblem. If the surrogate constraint set is nonempty the objective
//! subproblem supplies the candidate `xbar`, otherwise the feasibility
//! minimizer does. The iterate then moves by convex combination,
//! `x <- (1 - gamma_t) x + gamma_t xbar`.
//!
//! Surrogate value trackers provide free per-iteration progress estimates;
//! genuine sample-average diagnostics run every `saa_every` iterations on a
//! forked random stream so they never perturb the iteration noise.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::problem::{saa_estimate, SampleProblem, StateSampler};
use crate::subproblem::{
    solve_step, SolveOptions, SubproblemError, UpdateKind, WarmStart,
};
use crate::surrogate::{StepSchedule, SurrogateBank, SurrogateKind};
use crate::Error;

/// Everything that determines a run besides the problem instance itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub schedule: StepSchedule,
    pub surrogate: SurrogateKind,
    /// Proximal weight added to every surrogate.
    pub tau: f64,
    /// Samples drawn per iteration.
    pub batch: usize,
    pub seed: u64,
    pub subproblem_tol: f64,
    pub subproblem_max_inner: usize,
    /// Run a sample-average diagnostic every this many iterations
    /// (0 disables them).
    pub saa_every: usize,
    pub saa_samples: usize,
    /// Optional early stop once `|xbar - x|` falls below this value.
    pub stop_step_gap: Option<f64>,
}

impl RunConfig {
    pub fn new(iterations: usize) -> Self {
        RunConfig {
            iterations,
            schedule: StepSchedule::default_stochastic(),
            surrogate: SurrogateKind::Recursive,
            tau: 1.0,
            batch: 1,
            seed: 0,
            subproblem_tol: 1e-8,
            subproblem_max_inner: 10_000,
            saa_every: 100,
            saa_samples: 2_000,
            stop_step_gap: None,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParam("tau must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParam("batch must be at least 1".into()));
        }
        if !(self.subproblem_tol > 0.0) {
            return Err(Error::InvalidParam("subproblem_tol must be positive".into()));
        }
        if self.subproblem_max_inner == 0 {
            return Err(Error::InvalidParam("subproblem_max_inner must be at least 1".into()));
        }
        if self.saa_every > 0 && self.saa_samples == 0 {
            return Err(Error::InvalidParam(
                "saa_samples must be positive when diagnostics are enabled".into(),
            ));
        }
        if let Some(g) = self.stop_step_gap {
            if !(g > 0.0) {
                return Err(Error::InvalidParam("stop_step_gap must be positive".into()));
            }
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.subproblem_tol,
            max_inner: self.subproblem_max_inner,
            ..SolveOptions::default()
        }
    }
}

/// One row of the run trace. The `t = 0` row records the initial point;
/// fields that only exist once iterations run are `None` there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub t: usize,
    /// Iterate after this step (the starting point in the `t = 0` row).
    pub x: Vec<f64>,
    pub kind: Option<UpdateKind>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    /// Best achievable worst-constraint surrogate value this iteration.
    pub alpha: Option<f64>,
    /// Surrogate value tracker for the objective.
    pub f0_est: Option<f64>,
    /// Largest constraint value tracker.
    pub max_constraint_est: Option<f64>,
    /// Distance between the subproblem solution and the current iterate.
    pub step_gap: Option<f64>,
    pub subproblem_iters: Option<usize>,
    pub subproblem_residual: Option<f64>,
    /// Sample-average objective estimate on the diagnostic stream.
    pub saa_f0: Option<f64>,
    pub saa_max_constraint: Option<f64>,
    pub wallclock_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<IterateRecord>,
    pub final_x: Vec<f64>,
    pub seed: u64,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

impl RunTrace {
    /// Last record carrying sample-average diagnostics, if any were taken.
    pub fn last_saa(&self) -> Option<&IterateRecord> {
        self.records.iter().rev().find(|r| r.saa_f0.is_some())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("subproblem failed at iteration {iteration}: {source}")]
    Aborted {
        iteration: usize,
        #[source]
        source: SubproblemError,
        trace: RunTrace,
    },
    #[error(transparent)]
    Invalid(#[from] Error),
}

const SAA_STREAM_TAG: u64 = 0x5AA0;

fn saa_probe<P: SampleProblem>(
    problem: &P,
    x: &[f64],
    config: &RunConfig,
    base: &StateSampler,
    t: usize,
) -> Result<(f64, Option<f64>), Error> {
    let mut probe = base.fork(SAA_STREAM_TAG ^ t as u64);
    let est = saa_estimate(problem, x, config.saa_samples, &mut probe)?;
    let worst = est.values[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = if problem.num_constraints() > 0 { Some(worst) } else { None };
    Ok((est.values[0], worst))
}

/// How the per-iteration subproblem is solved. The serial engine solves the
/// joint problem; the parallel engine splits it across blocks.
pub(crate) trait StepEngine<P: SampleProblem> {
    fn step(
        &mut self,
        bank: &SurrogateBank<'_, P>,
        x_t: &[f64],
        domain: &crate::problem::Domain,
        opts: &SolveOptions,
    ) -> Result<crate::subproblem::StepResult, SubproblemError>;
}

pub(crate) struct SerialEngine {
    warm: WarmStart,
}

impl SerialEngine {
    pub(crate) fn new(x0: Vec<f64>, num_constraints: usize) -> Self {
        SerialEngine { warm: WarmStart::new(x0, num_constraints) }
    }
}

impl<P: SampleProblem> StepEngine<P> for SerialEngine {
    fn step(
        &mut self,
        bank: &SurrogateBank<'_, P>,
        _x_t: &[f64],
        domain: &crate::problem::Domain,
        opts: &SolveOptions,
    ) -> Result<crate::subproblem::StepResult, SubproblemError> {
        let constraints = bank.constraints();
        solve_step(bank.objective(), &constraints, domain, &mut self.warm, opts)
    }
}

/// Runs the full iteration from `x0`, which must belong to the domain.
pub fn run<P: SampleProblem>(
    problem: &P,
    x0: &[f64],
    config: &RunConfig,
) -> Result<RunTrace, DriverError> {
    let mut engine = SerialEngine::new(x0.to_vec(), problem.num_constraints());
    run_engine(problem, x0, config, &mut engine)
}

pub(crate) fn run_engine<P: SampleProblem, E: StepEngine<P>>(
    problem: &P,
    x0: &[f64],
    config: &RunConfig,
    engine: &mut E,
) -> Result<RunTrace, DriverError> {
    config.validate()?;
    let dim = problem.dim();
    if x0.len() != dim {
        return Err(Error::DomainDim { expected: dim, got: x0.len() }.into());
    }
    if !problem.domain().member(x0).map_err(Error::from)? {
        return Err(Error::InvalidParam(
            "initial point lies outside the domain; project it first".into(),
        )
        .into());
    }
    let m = problem.num_constraints();
    let opts = config.solve_options();

    let mut sampler = StateSampler::new(config.seed);
    let saa_base = sampler.fork(SAA_STREAM_TAG);

    let mut bank = SurrogateBank::new(problem, config.surrogate, vec![config.tau; m + 1])?;
    let mut x = x0.to_vec();

    let mut records = Vec::with_capacity(config.iterations + 1);
    let (saa_f0, saa_worst) = if config.saa_every > 0 {
        let (f0, worst) = saa_probe(problem, &x, config, &saa_base, 0)?;
        (Some(f0), worst)
    } else {
        (None, None)
    };
    records.push(IterateRecord {
        t: 0,
        x: x.clone(),
        kind: None,
        rho: None,
        gamma: None,
        alpha: None,
        f0_est: None,
        max_constraint_est: None,
        step_gap: None,
        subproblem_iters: None,
        subproblem_residual: None,
        saa_f0,
        saa_max_constraint: saa_worst,
        wallclock_ms: 0.0,
    });

    let mut stopped_early = false;
    let mut iterations_run = 0;
    for t in 0..config.iterations {
        let started = Instant::now();
        let samples: Vec<P::State> =
            (0..config.batch).map(|_| problem.draw(&mut sampler)).collect();
        let rho = config.schedule.rho(t);
        bank.update(&x, &samples, rho);

        let step = match engine.step(&bank, &x, problem.domain(), &opts) {
            Ok(s) => s,
            Err(e) => {
                let trace = RunTrace {
                    records,
                    final_x: x,
                    seed: config.seed,
                    iterations_run,
                    stopped_early: false,
                };
                return Err(DriverError::Aborted { iteration: t, source: e, trace });
            }
        };

        let gamma = config.schedule.gamma(t);
        let step_gap = linalg::dist(&step.solution.x, &x);
        for j in 0..dim {
            x[j] = (1.0 - gamma) * x[j] + gamma * step.solution.x[j];
        }
        iterations_run = t + 1;

        let trackers = bank.value_trackers();
        let max_tracker = if m > 0 {
            Some(trackers[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        } else {
            None
        };
        let (saa_f0, saa_worst) = if config.saa_every > 0 && (t + 1) % config.saa_every == 0 {
            let (f0, worst) = saa_probe(problem, &x, config, &saa_base, t + 1)?;
            (Some(f0), worst)
        } else {
            (None, None)
        };
        records.push(IterateRecord {
            t: t + 1,
            x: x.clone(),
            kind: Some(step.kind),
            rho: Some(rho),
            gamma: Some(gamma),
            alpha: step.feasibility_alpha,
            f0_est: Some(trackers[0]),
            max_constraint_est: max_tracker,
            step_gap: Some(step_gap),
            subproblem_iters: Some(step.solution.inner_iterations),
            subproblem_residual: Some(step.solution.residual),
            saa_f0,
            saa_max_constraint: saa_worst,
            wallclock_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if let Some(thresh) = config.stop_step_gap {
            if step_gap <= thresh {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(RunTrace { records, final_x: x, seed: config.seed, iterations_run, stopped_early })
}

/// Runs the loop in deterministic surrogate-descent mode: the surrogates
/// are rebuilt from scratch at the current iterate every iteration
/// (weight one), so each surrogate is exactly the sample model there. The
/// configured `gamma` rule is kept, the configured `rho` rule is ignored.
/// Meant for problems whose sampler is constant; with a random sampler this
/// degenerates to following single-sample models and nothing averages out.
pub fn run_deterministic_sca<P: SampleProblem>(
    problem: &P,
    x0: &[f64],
    config: &RunConfig,
) -> Result<RunTrace, DriverError> {
    let mut cfg = config.clone();
    cfg.schedule = StepSchedule::deterministic(cfg.schedule.gamma_rule().clone())?;
    run(problem, x0, &cfg)
}

/// Runs from several starting points with decorrelated seeds; returns one
/// trace per start, in order.
pub fn run_multi_start<P: SampleProblem>(
    problem: &P,
    starts: &[Vec<f64>],
    config: &RunConfig,
) -> Result<Vec<RunTrace>, DriverError> {
    let mut traces = Vec::with_capacity(starts.len());
    for (i, x0) in starts.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        traces.push(run(problem, x0, &cfg)?);
    }
    Ok(traces)
}

/// Index of the best run: lowest diagnostic objective among runs whose
/// diagnostic worst constraint is below `feas_tol`, falling back to value
/// trackers when diagnostics were disabled.
pub fn best_run(traces: &[RunTrace], feas_tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, tr) in traces.iter().enumerate() {
        let (f0, worst) = match tr.last_saa() {
            Some(r) => (r.saa_f0.unwrap(), r.saa_max_constraint.unwrap_or(f64::NEG_INFINITY)),
            None => match tr.records.last() {
                Some(r) => (
                    r.f0_est.unwrap_or(f64::INFINITY),
                    r.max_constraint_est.unwrap_or(f64::NEG_INFINITY),
                ),
                None => continue,
            },
        };
        if worst > feas_tol {
            continue;
        }
        if best.map_or(true, |(_, v)| f0 < v) {
            best = Some((i, f0));
        }
    }
    best.map(|(i, _)| i)
}
