//! TOML run configurations.
//!
//! A config names a problem, picks an algorithm, and sets the solver knobs
//! that differ from the problem's recommended defaults. Parsing happens in
//! two stages: a tolerant probe reads only the `problem` key to select the
//! parameter schema, then the full file is re-parsed against that schema
//! with unknown keys rejected, so typos fail with the TOML line and column.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Stochastic runs with per-iteration surrogate updates.
    Cssca,
    /// Same iteration, per-block subproblems solved concurrently.
    CsscaParallel,
    /// Deterministic surrogate refits (no sample averaging weight).
    DetSca,
    /// Sample average approximation: freeze a batch, solve deterministically.
    SaaSca,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Cssca => "cssca",
            Algorithm::CsscaParallel => "cssca-parallel",
            Algorithm::DetSca => "det-sca",
            Algorithm::SaaSca => "saa-sca",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateChoice {
    Recursive,
    Structured,
}

/// One diminishing step rule, `offset^exponent / (offset + t)^exponent`.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub offset: f64,
    pub exponent: f64,
}

/// Replaces the problem's recommended schedule wholesale; both rules are
/// required so a partial edit cannot silently keep a mismatched pair.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub rho: RuleSpec,
    pub gamma: RuleSpec,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaaSpec {
    /// Period of the sample-average diagnostics columns; 0 disables them.
    pub every: Option<usize>,
    /// Sample count behind each diagnostic estimate.
    pub estimate_samples: Option<usize>,
    /// Batch frozen by the saa-sca algorithm (required there, unused elsewhere).
    pub frozen_samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trace: PathBuf,
    #[serde(default)]
    pub sidecar: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MimoCovParams {
    pub antennas: usize,
    pub users: usize,
    pub channel_seed: u64,
}

impl Default for MimoCovParams {
    fn default() -> Self {
        MimoCovParams { antennas: 8, users: 4, channel_seed: 1 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustBfParams {
    pub antennas: usize,
    pub users: usize,
    pub channel_seed: u64,
}

impl Default for RobustBfParams {
    fn default() -> Self {
        RobustBfParams { antennas: 3, users: 3, channel_seed: 1 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridBfParams {
    pub antennas: usize,
    pub chains: usize,
    pub users: usize,
    /// Rank of the common channel correlation; defaults to `chains`.
    pub corr_rank: Option<usize>,
    pub power_budget: f64,
    pub channel_seed: u64,
}

impl Default for HybridBfParams {
    fn default() -> Self {
        HybridBfParams {
            antennas: 64,
            chains: 8,
            users: 4,
            corr_rank: None,
            power_budget: 1.0,
            channel_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipsoidParams {
    pub noise: f64,
}

impl Default for EllipsoidParams {
    fn default() -> Self {
        EllipsoidParams { noise: 0.4 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockBallsParams {
    pub blocks: usize,
    pub noise: f64,
}

impl Default for BlockBallsParams {
    fn default() -> Self {
        BlockBallsParams { blocks: 4, noise: 0.3 }
    }
}

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    MimoCovariance(MimoCovParams),
    RobustBeamforming(RobustBfParams),
    HybridBeamforming(HybridBfParams),
    Ellipsoid(EllipsoidParams),
    BlockBalls(BlockBallsParams),
}

pub const PROBLEM_NAMES: [&str; 5] =
    ["ex1-mimo-cov", "ex2-robust-bf", "ex3-hybrid-bf", "synthetic", "synthetic-blocks"];

/// A fully validated run request: config file contents plus any command-line
/// overrides already applied.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub path: PathBuf,
    /// Raw file contents, preserved verbatim in the trace sidecar.
    pub source: String,
    pub problem_name: String,
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub seed: u64,
    pub surrogate: Option<SurrogateChoice>,
    pub tau: Option<f64>,
    pub batch: Option<usize>,
    pub stop_step_gap: Option<f64>,
    pub schedule: Option<ScheduleSpec>,
    pub saa: SaaSpec,
    pub trace_path: PathBuf,
    sidecar_path: Option<PathBuf>,
}

impl RunSpec {
    /// Explicit `[output] sidecar` if set, otherwise the trace path with a
    /// `.json` extension.
    pub fn sidecar_path(&self) -> PathBuf {
        self.sidecar_path.clone().unwrap_or_else(|| self.trace_path.with_extension("json"))
    }
}

/// Command-line overrides layered on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, spec: &mut RunSpec) {
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(iterations) = self.iterations {
            spec.iterations = iterations;
        }
        if let Some(out) = &self.out {
            spec.trace_path = out.clone();
            spec.sidecar_path = None;
        }
    }
}

/// The shared shape of every config file; `params` is the per-problem part.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Shell<P> {
    #[allow(dead_code)]
    problem: String,
    #[serde(default)]
    params: P,
    algorithm: Algorithm,
    iterations: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    surrogate: Option<SurrogateChoice>,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    batch: Option<usize>,
    #[serde(default)]
    stop_step_gap: Option<f64>,
    #[serde(default)]
    schedule: Option<ScheduleSpec>,
    #[serde(default)]
    saa: Option<SaaSpec>,
    output: OutputSpec,
}

pub fn load(path: &Path) -> Result<RunSpec, ConfigError> {
    let source = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    from_source(path, source)
}

pub fn from_source(path: &Path, source: String) -> Result<RunSpec, ConfigError> {
    #[derive(Deserialize)]
    struct Probe {
        problem: Option<String>,
    }
    let schema_err = |e: toml::de::Error| ConfigError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let probe: Probe = toml::from_str(&source).map_err(schema_err)?;
    let name = probe.problem.ok_or_else(|| ConfigError::Invalid {
        path: path.to_path_buf(),
        message: "missing `problem` key".into(),
    })?;
    match name.as_str() {
        "ex1-mimo-cov" => finish(path, source, name.clone(), ProblemSpec::MimoCovariance),
        "ex2-robust-bf" => finish(path, source, name.clone(), ProblemSpec::RobustBeamforming),
        "ex3-hybrid-bf" => finish(path, source, name.clone(), ProblemSpec::HybridBeamforming),
        "synthetic" => finish(path, source, name.clone(), ProblemSpec::Ellipsoid),
        "synthetic-blocks" => finish(path, source, name.clone(), ProblemSpec::BlockBalls),
        other => Err(ConfigError::Invalid {
            path: path.to_path_buf(),
            message: format!("unknown problem {other:?}; expected one of {PROBLEM_NAMES:?}"),
        }),
    }
}

fn finish<P: DeserializeOwned + Default>(
    path: &Path,
    source: String,
    name: String,
    wrap: impl FnOnce(P) -> ProblemSpec,
) -> Result<RunSpec, ConfigError> {
    let shell: Shell<P> = toml::from_str(&source).map_err(|e| ConfigError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let spec = RunSpec {
        path: path.to_path_buf(),
        source,
        problem_name: name,
        problem: wrap(shell.params),
        algorithm: shell.algorithm,
        iterations: shell.iterations,
        seed: shell.seed,
        surrogate: shell.surrogate,
        tau: shell.tau,
        batch: shell.batch,
        stop_step_gap: shell.stop_step_gap,
        schedule: shell.schedule,
        saa: shell.saa.unwrap_or_default(),
        trace_path: shell.output.trace,
        sidecar_path: shell.output.sidecar,
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &RunSpec) -> Result<(), ConfigError> {
    let invalid = |message: String| ConfigError::Invalid { path: spec.path.clone(), message };
    if spec.algorithm == Algorithm::CsscaParallel
        && !matches!(spec.problem, ProblemSpec::BlockBalls(_))
    {
        return Err(invalid(format!(
            "algorithm cssca-parallel needs a block-decoupled problem; \
             {:?} is not one (use synthetic-blocks)",
            spec.problem_name
        )));
    }
    if spec.algorithm == Algorithm::SaaSca {
        match spec.saa.frozen_samples {
            Some(n) if n > 0 => {}
            _ => {
                return Err(invalid(
                    "algorithm saa-sca needs `frozen_samples` under [saa]".into(),
                ))
            }
        }
    }
    if let Some(tau) = spec.tau {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("tau must be positive and finite, got {tau}")));
        }
    }
    if spec.batch == Some(0) {
        return Err(invalid("batch must be at least 1".into()));
    }
    match &spec.problem {
        ProblemSpec::MimoCovariance(p) => {
            if p.users == 0 || p.antennas == 0 {
                return Err(invalid("antennas and users must be at least 1".into()));
            }
        }
        ProblemSpec::RobustBeamforming(p) => {
            if p.users == 0 || p.antennas < p.users {
                return Err(invalid(
                    "need users >= 1 and antennas >= users for the zero-forcing start".into(),
                ));
            }
        }
        ProblemSpec::HybridBeamforming(p) => {
            if p.chains == 0 || p.chains > p.antennas || p.users == 0 {
                return Err(invalid(
                    "need 1 <= chains <= antennas and users >= 1".into(),
                ));
            }
            let rank = p.corr_rank.unwrap_or(p.chains);
            if rank == 0 || rank > p.antennas {
                return Err(invalid(format!(
                    "corr_rank must lie in 1..={}, got {rank}",
                    p.antennas
                )));
            }
            if !(p.power_budget > 0.0) || !p.power_budget.is_finite() {
                return Err(invalid("power_budget must be positive and finite".into()));
            }
        }
        ProblemSpec::Ellipsoid(_) => {}
        ProblemSpec::BlockBalls(p) => {
            if p.blocks == 0 {
                return Err(invalid("blocks must be at least 1".into()));
            }
        }
    }
    Ok(())
}
