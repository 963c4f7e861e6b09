//! Executes one configured run: build the problem, pick a feasible starting
//! point, drive the chosen algorithm, and persist the trace.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use cssca_core::apps::hybrid_beamforming::HybridBeamforming;
use cssca_core::apps::mimo_covariance::MimoCovariance;
use cssca_core::apps::robust_beamforming::RobustBeamforming;
use cssca_core::apps::saa::saa_sca_baseline;
use cssca_core::apps::synthetic::{BlockBalls, NoisyEllipsoid};
use cssca_core::driver::{self, DriverError, RunConfig, RunTrace};
use cssca_core::parallel::parallel_run;
use cssca_core::problem::{kkt_residual, SampleProblem, StateSampler};
use cssca_core::surrogate::{StepRule, StepSchedule, SurrogateKind};

use crate::config::{Algorithm, ProblemSpec, RunSpec, SurrogateChoice};
use crate::trace::{self, Sidecar};

/// Everything the run subcommand reports after the trace is on disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub problem: String,
    pub dim: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub trace_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub final_objective: Option<f64>,
    pub final_violation: Option<f64>,
    pub kkt_stationarity: f64,
    pub kkt_violation: f64,
    pub total_wallclock_ms: f64,
}

pub fn execute(spec: &RunSpec) -> Result<RunOutcome> {
    let mut sampler = StateSampler::new(spec.seed).fork(1);
    match &spec.problem {
        ProblemSpec::MimoCovariance(p) => {
            let problem = MimoCovariance::small(p.channel_seed, p.antennas, p.users);
            let config = build_config(problem.recommended_config(spec.iterations), spec)?;
            let x0 = problem
                .feasible_start(&mut sampler, 300, 0.05)
                .context("could not construct a feasible starting point")?;
            let result = dispatch(&problem, &x0, &config, spec);
            postprocess(&problem, spec, result)
        }
        ProblemSpec::RobustBeamforming(p) => {
            let problem = RobustBeamforming::small(p.channel_seed, p.antennas, p.users);
            let config = build_config(problem.recommended_config(spec.iterations), spec)?;
            let x0 = problem
                .feasible_start(&mut sampler, 500)
                .context("could not construct a feasible starting point")?;
            let result = dispatch(&problem, &x0, &config, spec);
            postprocess(&problem, spec, result)
        }
        ProblemSpec::HybridBeamforming(p) => {
            let problem = HybridBeamforming::with_random_correlation(
                p.antennas,
                p.chains,
                p.users,
                p.corr_rank.unwrap_or(p.chains),
                p.power_budget,
                p.channel_seed,
            )?;
            let config = build_config(problem.recommended_config(spec.iterations), spec)?;
            let x0 = problem
                .feasible_start(&mut sampler, 2000)
                .context("could not construct a feasible starting point")?;
            let result = dispatch(&problem, &x0, &config, spec);
            postprocess(&problem, spec, result)
        }
        ProblemSpec::Ellipsoid(p) => {
            let problem = NoisyEllipsoid::new(p.noise);
            let config = build_config(RunConfig::new(spec.iterations), spec)?;
            let x0 = vec![0.0; problem.dim()];
            let result = dispatch(&problem, &x0, &config, spec);
            postprocess(&problem, spec, result)
        }
        ProblemSpec::BlockBalls(p) => {
            let problem = BlockBalls::new(p.blocks, p.noise)?;
            let config = build_config(RunConfig::new(spec.iterations), spec)?;
            let x0 = vec![0.1; problem.dim()];
            let result = if spec.algorithm == Algorithm::CsscaParallel {
                parallel_run(&problem, &x0, &config, worker_count(p.blocks)?)
            } else {
                dispatch(&problem, &x0, &config, spec)
            };
            postprocess(&problem, spec, result)
        }
    }
}

/// Layer the config file's solver overrides over the problem's defaults.
fn build_config(mut config: RunConfig, spec: &RunSpec) -> Result<RunConfig> {
    config.iterations = spec.iterations;
    config.seed = spec.seed;
    if let Some(choice) = spec.surrogate {
        config.surrogate = match choice {
            SurrogateChoice::Recursive => SurrogateKind::Recursive,
            SurrogateChoice::Structured => SurrogateKind::Structured,
        };
    }
    if let Some(tau) = spec.tau {
        config.tau = tau;
    }
    if let Some(batch) = spec.batch {
        config.batch = batch;
    }
    if spec.stop_step_gap.is_some() {
        config.stop_step_gap = spec.stop_step_gap;
    }
    if let Some(s) = &spec.schedule {
        config.schedule = StepSchedule::new(
            StepRule::power(s.rho.offset, s.rho.exponent),
            StepRule::power(s.gamma.offset, s.gamma.exponent),
        )
        .context("invalid [schedule]")?;
    }
    if let Some(every) = spec.saa.every {
        config.saa_every = every;
    }
    if let Some(n) = spec.saa.estimate_samples {
        config.saa_samples = n;
    }
    Ok(config)
}

fn dispatch<P: SampleProblem>(
    problem: &P,
    x0: &[f64],
    config: &RunConfig,
    spec: &RunSpec,
) -> Result<RunTrace, DriverError> {
    match spec.algorithm {
        Algorithm::Cssca => driver::run(problem, x0, config),
        Algorithm::DetSca => driver::run_deterministic_sca(problem, x0, config),
        Algorithm::SaaSca => {
            let n = spec.saa.frozen_samples.expect("checked during config validation");
            saa_sca_baseline(problem, n, config, x0)
        }
        Algorithm::CsscaParallel => {
            unreachable!("config validation restricts cssca-parallel to decoupled problems")
        }
    }
}

fn worker_count(default: usize) -> Result<usize> {
    match std::env::var("CSSCA_WORKERS") {
        Err(std::env::VarError::NotPresent) => Ok(default),
        Err(e) => Err(e).context("CSSCA_WORKERS must be valid unicode"),
        Ok(s) => {
            let n: usize = s
                .trim()
                .parse()
                .with_context(|| format!("CSSCA_WORKERS must be a positive integer, got {s:?}"))?;
            if n == 0 {
                bail!("CSSCA_WORKERS must be at least 1");
            }
            Ok(n)
        }
    }
}

/// Writes the trace and sidecar, then measures the final point. A solver
/// abort still persists the partial trace before surfacing the error, so a
/// failed run leaves its evidence on disk.
fn postprocess<P: SampleProblem>(
    problem: &P,
    spec: &RunSpec,
    result: Result<RunTrace, DriverError>,
) -> Result<RunOutcome> {
    let (trace, abort) = match result {
        Ok(t) => (t, None),
        Err(DriverError::Aborted { iteration, source, trace }) => {
            (trace, Some(format!("solver aborted at iteration {iteration}: {source}")))
        }
        Err(other) => return Err(other.into()),
    };
    let trace_path = spec.trace_path.clone();
    let sidecar_path = spec.sidecar_path();
    trace::write_csv(&trace_path, &trace)?;
    trace::write_sidecar(
        &sidecar_path,
        &Sidecar {
            version: env!("CARGO_PKG_VERSION").into(),
            problem: spec.problem_name.clone(),
            dim: problem.dim(),
            algorithm: spec.algorithm.to_string(),
            seed: spec.seed,
            iterations_requested: spec.iterations,
            iterations_run: trace.iterations_run,
            stopped_early: trace.stopped_early,
            final_x: trace.final_x.clone(),
            config_toml: spec.source.clone(),
        },
    )?;
    if let Some(message) = abort {
        bail!("{message}; partial trace written to {}", trace_path.display());
    }
    let mut kkt_sampler = StateSampler::new(spec.seed).fork(2);
    let kkt_samples = spec.saa.estimate_samples.unwrap_or(2000);
    let report = kkt_residual(problem, &trace.final_x, kkt_samples, &mut kkt_sampler)
        .context("KKT measurement at the final point failed")?;
    let last = trace.records.last().expect("traces always carry the initial row");
    Ok(RunOutcome {
        problem: spec.problem_name.clone(),
        dim: problem.dim(),
        algorithm: spec.algorithm,
        seed: spec.seed,
        trace_path,
        sidecar_path,
        iterations_run: trace.iterations_run,
        stopped_early: trace.stopped_early,
        final_objective: last.saa_f0.or(last.f0_est),
        final_violation: last.saa_max_constraint.or(last.max_constraint_est),
        kkt_stationarity: report.stationarity,
        kkt_violation: report.violation,
        total_wallclock_ms: trace.records.iter().map(|r| r.wallclock_ms).sum(),
    })
}

pub fn summary(outcome: &RunOutcome) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into());
    format!(
        "problem {} (dim {}), algorithm {}, seed {}\n\
         iterations run: {}{}\n\
         final objective estimate:      {}\n\
         final max-constraint estimate: {}\n\
         KKT residual at final point:   stationarity {:.3e}, violation {:.3e}\n\
         solver wall-clock: {:.1} ms\n\
         trace written to {} (sidecar {})",
        outcome.problem,
        outcome.dim,
        outcome.algorithm,
        outcome.seed,
        outcome.iterations_run,
        if outcome.stopped_early { " (stopped early at the step-gap target)" } else { "" },
        opt(outcome.final_objective),
        opt(outcome.final_violation),
        outcome.kkt_stationarity,
        outcome.kkt_violation,
        outcome.total_wallclock_ms,
        outcome.trace_path.display(),
        outcome.sidecar_path.display(),
    )
}
