//! Step-size schedules and convex surrogate models.
//!
//! Each function `f_i(x) = E[g_i(x, s)]` is shadowed by a strongly convex
//! surrogate that is refreshed once per iteration from fresh samples. Two
//! constructions are provided:
//!
//! * recursive quadratic: blend the previous surrogate with a first-order
//!   sample model `g_i(y,s) + grad g_i(y,s)^T (x - y) + tau |x - y|^2`, all
//!   of which stays a closed-form isotropic quadratic `q|x|^2 + b^T x + c`;
//! * structured: keep the declared convex component of `g_i` exact in the
//!   current sample, linearize only the remainder, and track value/gradient
//!   averages recursively so the fixed-sample pieces do not have to be
//!   replayed.
//!
//! Both constructions average in new information with a diminishing weight
//! `rho_t`, while iterates move with a faster-diminishing weight `gamma_t`.
//! The defaults follow the usual two-timescale requirements: writing
//! `rho_t ~ t^(-k1)` and `gamma_t ~ t^(-k2)`, the pair must satisfy
//! `0.5 <= k1 < k2 <= 1` so that sampling noise averages out faster than the
//! iterates move.

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::problem::{saa_estimate, SampleProblem, StateSampler};
use crate::Error;

/// A scalar step-size sequence indexed by the iteration counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum StepRule {
    /// `coeff / (offset + t)^exponent`.
    Power { coeff: f64, offset: f64, exponent: f64 },
    /// Constantly one. Only constructible through deterministic schedules,
    /// where no noise averaging takes place.
    One,
}

impl StepRule {
    /// Convenience constructor for `(offset + t)^-exponent` scaled so the
    /// first value is exactly one.
    pub fn power(offset: f64, exponent: f64) -> StepRule {
        StepRule::Power { coeff: offset.powf(exponent), offset, exponent }
    }

    pub fn value(&self, t: usize) -> f64 {
        match self {
            StepRule::Power { coeff, offset, exponent } => coeff / (offset + t as f64).powf(*exponent),
            StepRule::One => 1.0,
        }
    }

    pub fn exponent(&self) -> f64 {
        match self {
            StepRule::Power { exponent, .. } => *exponent,
            StepRule::One => 0.0,
        }
    }

    fn validate_basic(&self, name: &str) -> Result<(), Error> {
        if let StepRule::Power { coeff, offset, exponent } = self {
            if !(*coeff > 0.0) || !coeff.is_finite() {
                return Err(Error::InvalidSchedule(format!("{name}: coeff must be positive")));
            }
            if !(*offset > 0.0) || !offset.is_finite() {
                return Err(Error::InvalidSchedule(format!("{name}: offset must be positive")));
            }
            if !(*exponent >= 0.0) || !exponent.is_finite() {
                return Err(Error::InvalidSchedule(format!("{name}: exponent must be nonnegative")));
            }
            if self.value(0) > 1.0 + 1e-12 {
                return Err(Error::InvalidSchedule(format!(
                    "{name}: first value {:.6} exceeds 1",
                    self.value(0)
                )));
            }
        }
        Ok(())
    }
}

/// The paired schedules `(rho_t, gamma_t)` driving surrogate averaging and
/// iterate smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct StepSchedule {
    rho: StepRule,
    gamma: StepRule,
}

#[derive(Deserialize)]
struct RawSchedule {
    rho: StepRule,
    gamma: StepRule,
}

impl TryFrom<RawSchedule> for StepSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self, Error> {
        if matches!(raw.rho, StepRule::One) {
            StepSchedule::deterministic(raw.gamma)
        } else {
            StepSchedule::new(raw.rho, raw.gamma)
        }
    }
}

impl StepSchedule {
    /// Validated stochastic schedule. Requires power rules with exponents
    /// `0.5 <= k_rho < k_gamma <= 1`. The lower boundary is inclusive
    /// because the robust-beamforming benchmark runs exactly at 0.5.
    pub fn new(rho: StepRule, gamma: StepRule) -> Result<Self, Error> {
        rho.validate_basic("rho")?;
        gamma.validate_basic("gamma")?;
        let k1 = rho.exponent();
        let k2 = gamma.exponent();
        if matches!(rho, StepRule::One) || matches!(gamma, StepRule::One) {
            return Err(Error::InvalidSchedule(
                "constant rules are reserved for deterministic mode".into(),
            ));
        }
        if k1 < 0.5 {
            return Err(Error::InvalidSchedule(format!(
                "rho exponent {k1} too small: noise does not average out (need >= 0.5)"
            )));
        }
        if k1 > 1.0 {
            return Err(Error::InvalidSchedule(format!(
                "rho exponent {k1} too large: surrogate stops learning (need <= 1)"
            )));
        }
        if k2 <= k1 {
            return Err(Error::InvalidSchedule(format!(
                "gamma exponent {k2} must exceed rho exponent {k1} so gamma/rho -> 0"
            )));
        }
        if k2 > 1.0 {
            return Err(Error::InvalidSchedule(format!(
                "gamma exponent {k2} too large: steps sum to a finite length (need <= 1)"
            )));
        }
        Ok(StepSchedule { rho, gamma })
    }

    /// Schedule for deterministic surrogate-descent mode: the surrogate is
    /// rebuilt from scratch each iteration (`rho = 1`) and only the iterate
    /// smoothing `gamma` remains.
    pub fn deterministic(gamma: StepRule) -> Result<Self, Error> {
        gamma.validate_basic("gamma")?;
        if gamma.exponent() > 1.0 {
            return Err(Error::InvalidSchedule(
                "gamma exponent above 1 gives a finite total step length".into(),
            ));
        }
        Ok(StepSchedule { rho: StepRule::One, gamma })
    }

    /// Generic stochastic default.
    pub fn default_stochastic() -> Self {
        StepSchedule::new(StepRule::power(1.0, 0.6), StepRule::power(1.0, 0.9))
            .expect("default schedule must validate")
    }

    pub fn rho(&self, t: usize) -> f64 {
        self.rho.value(t)
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma.value(t)
    }

    pub fn rho_rule(&self) -> &StepRule {
        &self.rho
    }

    pub fn gamma_rule(&self) -> &StepRule {
        &self.gamma
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.rho, StepRule::One)
    }
}

/// Interface the subproblem solver sees: a smooth strongly convex function
/// with evaluations, gradients, and a known convexity modulus.
pub trait Surrogate {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;

    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, &mut out);
        out
    }

    /// Strong convexity modulus `sigma` (the Hessian dominates `sigma I`).
    fn strong_convexity(&self) -> f64;

    /// Exact quadratic form if the surrogate is one; enables closed-form
    /// subproblem paths.
    fn as_quadratic(&self) -> Option<QuadraticSurrogate> {
        None
    }
}

/// Isotropic quadratic `q |x|^2 + b^T x + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSurrogate {
    pub q: f64,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticSurrogate {
    pub fn zero(dim: usize) -> Self {
        QuadraticSurrogate { q: 0.0, b: vec![0.0; dim], c: 0.0 }
    }

    /// First-order sample model of `g` anchored at `y`:
    /// `g(y,s) + grad^T (x - y) + tau |x - y|^2`, expanded into `(q, b, c)`.
    pub fn first_order(tau: f64, y: &[f64], g_val: f64, g_grad: &[f64]) -> Self {
        assert_eq!(y.len(), g_grad.len(), "anchor/gradient length mismatch");
        let mut b = g_grad.to_vec();
        linalg::axpy(-2.0 * tau, y, &mut b);
        let c = g_val - linalg::dot(g_grad, y) + tau * linalg::norm_sq(y);
        QuadraticSurrogate { q: tau, b, c }
    }

    /// Recursive blend `self <- (1 - rho) self + rho sample`, coefficientwise.
    pub fn blend(&mut self, rho: f64, sample: &QuadraticSurrogate) {
        assert_eq!(self.b.len(), sample.b.len(), "surrogate dimension mismatch");
        let keep = 1.0 - rho;
        self.q = keep * self.q + rho * sample.q;
        self.c = keep * self.c + rho * sample.c;
        for (bi, si) in self.b.iter_mut().zip(&sample.b) {
            *bi = keep * *bi + rho * si;
        }
    }

    /// Coefficientwise mean of several quadratics (multi-sample averaging).
    pub fn average(items: &[QuadraticSurrogate]) -> QuadraticSurrogate {
        assert!(!items.is_empty(), "cannot average zero surrogates");
        let mut out = QuadraticSurrogate::zero(items[0].b.len());
        let w = 1.0 / items.len() as f64;
        for it in items {
            out.q += w * it.q;
            out.c += w * it.c;
            linalg::axpy(w, &it.b, &mut out.b);
        }
        out
    }

    /// Unconstrained minimizer `-b / (2q)`, when strongly convex.
    pub fn unconstrained_minimizer(&self) -> Option<Vec<f64>> {
        if self.q > 0.0 {
            Some(self.b.iter().map(|bi| -bi / (2.0 * self.q)).collect())
        } else {
            None
        }
    }
}

impl Surrogate for QuadraticSurrogate {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.q * linalg::norm_sq(x) + linalg::dot(&self.b, x) + self.c
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), bi) in out.iter_mut().zip(x).zip(&self.b) {
            *o = 2.0 * self.q * xi + bi;
        }
    }

    fn strong_convexity(&self) -> f64 {
        2.0 * self.q
    }

    fn as_quadratic(&self) -> Option<QuadraticSurrogate> {
        Some(self.clone())
    }
}

/// Structured surrogate state for one function index.
///
/// The model at iteration `t`, anchored at `x_t` with weight `rho`:
///
/// ```text
/// (1-rho) f_prev + rho gcvx(x, s_t) + rho gncv(x_t, s_t)
///   + rho grad_gncv(x_t, s_t)^T (x - x_t) + (1-rho) Fprev^T (x - x_t)
///   + tau |x - x_t|^2
/// ```
///
/// where `f_prev`/`Fprev` are the tracked value and full-gradient averages
/// from the previous iteration. At the anchor the surrogate reproduces the
/// updated trackers exactly, both in value and gradient, which is what makes
/// the tracked quantities usable as cheap progress estimates.
pub struct StructuredSurrogate<'p, P: SampleProblem> {
    problem: &'p P,
    index: usize,
    tau: f64,
    split: bool,
    pure_quadratic: bool,
    rho: f64,
    anchor: Vec<f64>,
    samples: Vec<P::State>,
    prev_val: f64,
    prev_grad: Vec<f64>,
    val_tracker: f64,
    grad_tracker: Vec<f64>,
    ncv_val_anchor: f64,
    ncv_grad_anchor: Vec<f64>,
    initialized: bool,
}

impl<'p, P: SampleProblem> StructuredSurrogate<'p, P> {
    fn new(problem: &'p P, index: usize, tau: f64) -> Self {
        let dim = problem.dim();
        // Functions without a declared split are handled by treating all of
        // g as the linearized component; the surrogate is then an exact
        // quadratic.
        let split = problem.has_split(index);
        let pure_quadratic = !split || problem.convex_component_is_zero(index);
        StructuredSurrogate {
            problem,
            index,
            tau,
            split,
            pure_quadratic,
            rho: 0.0,
            anchor: vec![0.0; dim],
            samples: Vec::new(),
            prev_val: 0.0,
            prev_grad: vec![0.0; dim],
            val_tracker: 0.0,
            grad_tracker: vec![0.0; dim],
            ncv_val_anchor: 0.0,
            ncv_grad_anchor: vec![0.0; dim],
            initialized: false,
        }
    }

    fn update(&mut self, x_t: &[f64], samples: &[P::State], rho: f64) {
        assert!(!samples.is_empty(), "surrogate update needs at least one sample");
        let dim = self.problem.dim();
        self.prev_val = self.val_tracker;
        self.prev_grad.copy_from_slice(&self.grad_tracker);
        self.anchor.copy_from_slice(x_t);
        self.rho = rho;
        self.samples = samples.to_vec();

        let w = 1.0 / samples.len() as f64;
        let mut full_val = 0.0;
        let mut full_grad = vec![0.0; dim];
        let mut ncv_val = 0.0;
        let mut ncv_grad = vec![0.0; dim];
        for s in samples {
            if self.split {
                let nv = self.problem.nonconvex_value(self.index, x_t, s);
                let ng = self.problem.nonconvex_gradient(self.index, x_t, s);
                let cv = self.problem.convex_value(self.index, x_t, s);
                let cg = self.problem.convex_gradient(self.index, x_t, s);
                ncv_val += w * nv;
                linalg::axpy(w, &ng, &mut ncv_grad);
                full_val += w * (nv + cv);
                linalg::axpy(w, &ng, &mut full_grad);
                linalg::axpy(w, &cg, &mut full_grad);
            } else {
                let v = self.problem.value(self.index, x_t, s);
                let g = self.problem.gradient(self.index, x_t, s);
                ncv_val += w * v;
                linalg::axpy(w, &g, &mut ncv_grad);
                full_val += w * v;
                linalg::axpy(w, &g, &mut full_grad);
            }
        }
        self.ncv_val_anchor = ncv_val;
        self.ncv_grad_anchor = ncv_grad;
        let keep = 1.0 - rho;
        self.val_tracker = keep * self.prev_val + rho * full_val;
        for j in 0..dim {
            self.grad_tracker[j] = keep * self.prev_grad[j] + rho * full_grad[j];
        }
        self.initialized = true;
    }

    fn mean_convex_value(&self, x: &[f64]) -> f64 {
        if !self.split {
            return 0.0;
        }
        let w = 1.0 / self.samples.len() as f64;
        self.samples.iter().map(|s| w * self.problem.convex_value(self.index, x, s)).sum()
    }

    /// Tracked value average `f_i^t`; equals the surrogate value at the anchor.
    pub fn tracked_value(&self) -> f64 {
        self.val_tracker
    }

    /// Tracked gradient average; equals the surrogate gradient at the anchor.
    pub fn tracked_gradient(&self) -> &[f64] {
        &self.grad_tracker
    }
}

impl<'p, P: SampleProblem> Surrogate for StructuredSurrogate<'p, P> {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        assert!(self.initialized, "surrogate evaluated before the first update");
        let keep = 1.0 - self.rho;
        let mut acc = keep * self.prev_val
            + self.rho * (self.mean_convex_value(x) + self.ncv_val_anchor)
            + self.tau * linalg::dist(x, &self.anchor).powi(2);
        for j in 0..x.len() {
            let d = x[j] - self.anchor[j];
            acc += (self.rho * self.ncv_grad_anchor[j] + keep * self.prev_grad[j]) * d;
        }
        acc
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        assert!(self.initialized, "surrogate evaluated before the first update");
        let keep = 1.0 - self.rho;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.rho * self.ncv_grad_anchor[j]
                + keep * self.prev_grad[j]
                + 2.0 * self.tau * (x[j] - self.anchor[j]);
        }
        self.mean_convex_grad_into_scaled(x, out);
    }

    fn strong_convexity(&self) -> f64 {
        2.0 * self.tau
    }

    fn as_quadratic(&self) -> Option<QuadraticSurrogate> {
        if !self.pure_quadratic || !self.initialized {
            return None;
        }
        let keep = 1.0 - self.rho;
        let dim = self.anchor.len();
        let mut b = vec![0.0; dim];
        let mut lin_at_anchor = 0.0;
        for j in 0..dim {
            let slope = self.rho * self.ncv_grad_anchor[j] + keep * self.prev_grad[j];
            b[j] = slope - 2.0 * self.tau * self.anchor[j];
            lin_at_anchor += slope * self.anchor[j];
        }
        let c = keep * self.prev_val + self.rho * self.ncv_val_anchor - lin_at_anchor
            + self.tau * linalg::norm_sq(&self.anchor);
        Some(QuadraticSurrogate { q: self.tau, b, c })
    }
}

impl<'p, P: SampleProblem> StructuredSurrogate<'p, P> {
    fn mean_convex_grad_into_scaled(&self, x: &[f64], out: &mut [f64]) {
        if !self.split {
            return;
        }
        let w = self.rho / self.samples.len() as f64;
        for s in &self.samples {
            let g = self.problem.convex_gradient(self.index, x, s);
            linalg::axpy(w, &g, out);
        }
    }
}

/// Which surrogate construction a bank uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    Recursive,
    Structured,
}

/// One surrogate per function (objective + constraints), plus the running
/// value trackers used for cheap trace estimates.
pub struct SurrogateBank<'p, P: SampleProblem> {
    problem: &'p P,
    kind: SurrogateKind,
    tau: Vec<f64>,
    updates: usize,
    quads: Vec<QuadraticSurrogate>,
    structured: Vec<StructuredSurrogate<'p, P>>,
    value_trackers: Vec<f64>,
}

impl<'p, P: SampleProblem> SurrogateBank<'p, P> {
    /// `tau` holds one proximal weight per function, objective first
    /// (`m + 1` entries).
    pub fn new(problem: &'p P, kind: SurrogateKind, tau: Vec<f64>) -> Result<Self, Error> {
        let funcs = problem.num_constraints() + 1;
        if tau.len() != funcs {
            return Err(Error::InvalidParam(format!(
                "need {funcs} proximal weights (objective + constraints), got {}",
                tau.len()
            )));
        }
        if tau.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidParam("proximal weights must be positive".into()));
        }
        let dim = problem.dim();
        let quads = (0..funcs).map(|_| QuadraticSurrogate::zero(dim)).collect();
        let structured =
            (0..funcs).map(|i| StructuredSurrogate::new(problem, i, tau[i])).collect();
        Ok(SurrogateBank {
            problem,
            kind,
            tau,
            updates: 0,
            quads,
            structured,
            value_trackers: vec![0.0; funcs],
        })
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn num_constraints(&self) -> usize {
        self.value_trackers.len() - 1
    }

    /// Number of updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Refreshes every surrogate with this iteration's samples at anchor
    /// `x_t`, blending with weight `rho`.
    pub fn update(&mut self, x_t: &[f64], samples: &[P::State], rho: f64) {
        assert!(!samples.is_empty(), "surrogate update needs at least one sample");
        assert!((0.0..=1.0).contains(&rho) && rho > 0.0, "rho must lie in (0, 1]");
        let funcs = self.value_trackers.len();
        match self.kind {
            SurrogateKind::Recursive => {
                for i in 0..funcs {
                    let mut mean_val = 0.0;
                    let mut sample_quads = Vec::with_capacity(samples.len());
                    let w = 1.0 / samples.len() as f64;
                    for s in samples {
                        let v = self.problem.value(i, x_t, s);
                        let g = self.problem.gradient(i, x_t, s);
                        mean_val += w * v;
                        sample_quads.push(QuadraticSurrogate::first_order(self.tau[i], x_t, v, &g));
                    }
                    let averaged = QuadraticSurrogate::average(&sample_quads);
                    self.quads[i].blend(rho, &averaged);
                    self.value_trackers[i] = (1.0 - rho) * self.value_trackers[i] + rho * mean_val;
                }
            }
            SurrogateKind::Structured => {
                for i in 0..funcs {
                    self.structured[i].update(x_t, samples, rho);
                    self.value_trackers[i] = self.structured[i].tracked_value();
                }
            }
        }
        self.updates += 1;
    }

    pub fn surrogate(&self, i: usize) -> &dyn Surrogate {
        assert!(self.updates > 0, "surrogate bank queried before the first update");
        match self.kind {
            SurrogateKind::Recursive => &self.quads[i],
            SurrogateKind::Structured => &self.structured[i],
        }
    }

    pub fn objective(&self) -> &dyn Surrogate {
        self.surrogate(0)
    }

    /// Constraint surrogates in order (empty when `m = 0`).
    pub fn constraints(&self) -> Vec<&dyn Surrogate> {
        (1..self.value_trackers.len()).map(|i| self.surrogate(i)).collect()
    }

    /// Running value estimates `f_i^t`, objective first. Cheap by-products
    /// of the recursion, suitable for traces; they lag the iterate by the
    /// averaging weight.
    pub fn value_trackers(&self) -> &[f64] {
        &self.value_trackers
    }
}

/// Gap between each surrogate and a fresh sample-average estimate at `x_t`,
/// in value and in gradient norm. Shrinking gaps along a run are the
/// practical sign that the two-timescale averaging is working.
#[derive(Clone, Debug)]
pub struct ConsistencyGap {
    pub value_gaps: Vec<f64>,
    pub gradient_gaps: Vec<f64>,
}

pub fn consistency_gap<P: SampleProblem>(
    bank: &SurrogateBank<'_, P>,
    problem: &P,
    x_t: &[f64],
    n: usize,
    sampler: &mut StateSampler,
) -> Result<ConsistencyGap, Error> {
    let est = saa_estimate(problem, x_t, n, sampler)?;
    let funcs = problem.num_constraints() + 1;
    let mut value_gaps = Vec::with_capacity(funcs);
    let mut gradient_gaps = Vec::with_capacity(funcs);
    for i in 0..funcs {
        let s = bank.surrogate(i);
        value_gaps.push((s.eval(x_t) - est.values[i]).abs());
        let g = s.grad(x_t);
        gradient_gaps.push(linalg::dist(&g, &est.gradients[i]));
    }
    Ok(ConsistencyGap { value_gaps, gradient_gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::fd_gradient;
    use crate::problem::Domain;
    use proptest::prelude::*;

    #[test]
    fn benchmark_schedules_validate() {
        // 1/(1+t)^0.9 with 15/(15+t); 1/(1+t)^0.5 with 1/(1+t)^0.6;
        // 1/(1+t)^(2/3) with 2/(2+t); and the generic default.
        let pairs = vec![
            (StepRule::power(1.0, 0.9), StepRule::power(15.0, 1.0)),
            (StepRule::power(1.0, 0.5), StepRule::power(1.0, 0.6)),
            (StepRule::power(1.0, 2.0 / 3.0), StepRule::power(2.0, 1.0)),
            (StepRule::power(1.0, 0.6), StepRule::power(1.0, 0.9)),
        ];
        for (rho, gamma) in pairs {
            StepSchedule::new(rho, gamma).expect("benchmark schedule must validate");
        }
    }

    #[test]
    fn schedule_rejects_bad_exponent_order() {
        let err = StepSchedule::new(StepRule::power(1.0, 0.9), StepRule::power(1.0, 0.6));
        assert!(err.is_err(), "gamma must diminish faster than rho");
        let err = StepSchedule::new(StepRule::power(1.0, 0.3), StepRule::power(1.0, 0.9));
        assert!(err.is_err(), "rho exponent below 0.5 must be rejected");
        let err = StepSchedule::new(StepRule::power(1.0, 0.6), StepRule::power(1.0, 1.2));
        assert!(err.is_err(), "gamma exponent above 1 must be rejected");
    }

    #[test]
    fn schedule_rejects_values_above_one() {
        let rule = StepRule::Power { coeff: 3.0, offset: 2.0, exponent: 1.0 };
        assert!(rule.validate_basic("gamma").is_err(), "first value 1.5 must be rejected");
    }

    #[test]
    fn shifted_rule_matches_closed_form() {
        let gamma = StepRule::Power { coeff: 15.0, offset: 15.0, exponent: 1.0 };
        assert!((gamma.value(0) - 1.0).abs() < 1e-15);
        assert!((gamma.value(15) - 0.5).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 0..100 {
            let v = gamma.value(t);
            assert!(v <= prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn first_order_with_zero_gradient_is_pure_prox() {
        let y = vec![1.0, -2.0];
        let s = QuadraticSurrogate::first_order(0.5, &y, 3.0, &[0.0, 0.0]);
        for x in [vec![0.0, 0.0], vec![1.0, -2.0], vec![2.5, 1.0]] {
            let expected = 3.0 + 0.5 * linalg::dist(&x, &y).powi(2);
            assert!((s.eval(&x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_matches_anchor_value_and_gradient() {
        let y = vec![0.3, -0.7, 1.1];
        let g_val = -2.0;
        let g_grad = vec![1.0, 0.5, -0.25];
        let s = QuadraticSurrogate::first_order(2.0, &y, g_val, &g_grad);
        assert!((s.eval(&y) - g_val).abs() < 1e-12, "anchor value mismatch");
        let fd = fd_gradient(|x| s.eval(x), &y, 1e-6);
        let analytic = s.grad(&y);
        assert!(linalg::dist(&analytic, &g_grad) < 1e-12, "anchor gradient mismatch");
        assert!(linalg::dist(&analytic, &fd) < 1e-6, "gradient disagrees with finite differences");
    }

    #[test]
    fn recursive_blend_with_rho_one_replaces() {
        let mut s = QuadraticSurrogate { q: 5.0, b: vec![1.0, 1.0], c: -3.0 };
        let sample = QuadraticSurrogate { q: 1.0, b: vec![0.5, -0.5], c: 2.0 };
        s.blend(1.0, &sample);
        assert_eq!(s, sample);
    }

    #[test]
    fn recursive_blend_from_zero_halves_sample() {
        let mut s = QuadraticSurrogate::zero(2);
        let sample = QuadraticSurrogate { q: 1.0, b: vec![2.0, -4.0], c: 6.0 };
        s.blend(0.5, &sample);
        assert_eq!(s, QuadraticSurrogate { q: 0.5, b: vec![1.0, -2.0], c: 3.0 });
    }

    #[test]
    fn recursion_matches_unrolled_weighted_sum() {
        // After updates with rho_0..rho_k the surrogate must equal
        // sum_j w_j sample_j with w_j = rho_j prod_{l>j} (1 - rho_l).
        let rhos = [1.0, 0.7, 0.4];
        let samples = [
            QuadraticSurrogate { q: 1.0, b: vec![1.0, 0.0], c: 0.5 },
            QuadraticSurrogate { q: 2.0, b: vec![0.0, 1.0], c: -1.0 },
            QuadraticSurrogate { q: 0.5, b: vec![-1.0, 2.0], c: 0.0 },
        ];
        let mut s = QuadraticSurrogate::zero(2);
        for (rho, sample) in rhos.iter().zip(&samples) {
            s.blend(*rho, sample);
        }
        let mut expected = QuadraticSurrogate::zero(2);
        for j in 0..3 {
            let mut w = rhos[j];
            for l in (j + 1)..3 {
                w *= 1.0 - rhos[l];
            }
            expected.q += w * samples[j].q;
            expected.c += w * samples[j].c;
            linalg::axpy(w, &samples[j].b, &mut expected.b);
        }
        assert!((s.q - expected.q).abs() < 1e-10);
        assert!((s.c - expected.c).abs() < 1e-10);
        assert!(linalg::dist(&s.b, &expected.b) < 1e-10);
    }

    /// Two-function test problem with a declared split on the constraint:
    /// g_1 = (convex) |x|^2 + (nonconvex) sin(x_0) + noise-free.
    struct SplitToy {
        domain: Domain,
    }

    impl SampleProblem for SplitToy {
        type State = f64;
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn domain(&self) -> &Domain {
            &self.domain
        }
        fn draw(&self, sampler: &mut StateSampler) -> f64 {
            sampler.standard_normal()
        }
        fn value(&self, i: usize, x: &[f64], s: &f64) -> f64 {
            match i {
                0 => linalg::norm_sq(x) + s * x[0],
                1 => linalg::norm_sq(x) + x[0].sin() + s * x[1],
                _ => unreachable!(),
            }
        }
        fn gradient(&self, i: usize, x: &[f64], s: &f64) -> Vec<f64> {
            match i {
                0 => vec![2.0 * x[0] + s, 2.0 * x[1]],
                1 => vec![2.0 * x[0] + x[0].cos(), 2.0 * x[1] + s],
                _ => unreachable!(),
            }
        }
        fn has_split(&self, i: usize) -> bool {
            i == 1
        }
        fn convex_value(&self, _i: usize, x: &[f64], _s: &f64) -> f64 {
            linalg::norm_sq(x)
        }
        fn convex_gradient(&self, _i: usize, x: &[f64], _s: &f64) -> Vec<f64> {
            vec![2.0 * x[0], 2.0 * x[1]]
        }
        fn nonconvex_value(&self, _i: usize, x: &[f64], s: &f64) -> f64 {
            x[0].sin() + s * x[1]
        }
        fn nonconvex_gradient(&self, _i: usize, x: &[f64], s: &f64) -> Vec<f64> {
            vec![x[0].cos(), *s]
        }
    }

    fn split_toy() -> SplitToy {
        SplitToy { domain: Domain::symmetric_box(2, 3.0) }
    }

    #[test]
    fn structured_first_update_unrolls_to_sample_model() {
        // With rho = 1 and zero history the structured surrogate is
        // gcvx(x, s) + gncv(x0, s) + grad_gncv(x0, s)^T (x - x0) + tau |x - x0|^2.
        let p = split_toy();
        let tau = 0.8;
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Structured, vec![tau, tau]).unwrap();
        let x0 = vec![0.4, -0.2];
        let s = 0.9f64;
        bank.update(&x0, &[s], 1.0);
        let surr = bank.surrogate(1);
        let mut sampler = StateSampler::new(1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| sampler.standard_normal()).collect();
            let expected = p.convex_value(1, &x, &s)
                + p.nonconvex_value(1, &x0, &s)
                + linalg::dot(&p.nonconvex_gradient(1, &x0, &s), &[x[0] - x0[0], x[1] - x0[1]])
                + tau * linalg::dist(&x, &x0).powi(2);
            assert!((surr.eval(&x) - expected).abs() < 1e-12, "structured unroll mismatch");
        }
    }

    #[test]
    fn structured_anchor_matches_trackers() {
        let p = split_toy();
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Structured, vec![1.0, 1.0]).unwrap();
        let mut sampler = StateSampler::new(3);
        let schedule = StepSchedule::default_stochastic();
        let mut x = vec![0.1, 0.2];
        for t in 0..6 {
            let s = p.draw(&mut sampler);
            bank.update(&x, &[s], schedule.rho(t));
            for i in 0..2 {
                let surr = &bank.structured[i];
                assert!(
                    (surr.eval(&x) - surr.tracked_value()).abs() < 1e-12,
                    "surrogate value at anchor must equal the tracked value"
                );
                let g = surr.grad(&x);
                assert!(
                    linalg::dist(&g, surr.tracked_gradient()) < 1e-12,
                    "surrogate gradient at anchor must equal the tracked gradient"
                );
            }
            x[0] += 0.05;
            x[1] -= 0.03;
        }
    }

    #[test]
    fn structured_value_without_nonconvex_part_tracks_scalar() {
        // gncv == 0 and tau -> 0: the surrogate value at the anchor reduces
        // to (1 - rho) f_prev + rho gcvx(x_t, s_t).
        struct PureConvex {
            domain: Domain,
        }
        impl SampleProblem for PureConvex {
            type State = f64;
            fn dim(&self) -> usize {
                1
            }
            fn num_constraints(&self) -> usize {
                0
            }
            fn domain(&self) -> &Domain {
                &self.domain
            }
            fn draw(&self, sampler: &mut StateSampler) -> f64 {
                sampler.standard_normal()
            }
            fn value(&self, _i: usize, x: &[f64], s: &f64) -> f64 {
                x[0] * x[0] + s
            }
            fn gradient(&self, _i: usize, x: &[f64], _s: &f64) -> Vec<f64> {
                vec![2.0 * x[0]]
            }
            fn has_split(&self, _i: usize) -> bool {
                true
            }
            fn convex_value(&self, _i: usize, x: &[f64], s: &f64) -> f64 {
                x[0] * x[0] + s
            }
            fn convex_gradient(&self, _i: usize, x: &[f64], _s: &f64) -> Vec<f64> {
                vec![2.0 * x[0]]
            }
            fn nonconvex_value(&self, _i: usize, _x: &[f64], _s: &f64) -> f64 {
                0.0
            }
            fn nonconvex_gradient(&self, _i: usize, _x: &[f64], _s: &f64) -> Vec<f64> {
                vec![0.0]
            }
        }
        let p = PureConvex { domain: Domain::symmetric_box(1, 2.0) };
        let tau = 1e-12;
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Structured, vec![tau]).unwrap();
        let x0 = vec![0.5];
        bank.update(&x0, &[2.0], 1.0);
        let f_prev = bank.value_trackers()[0];
        let x1 = vec![0.3];
        let rho = 0.25;
        bank.update(&x1, &[-1.0], rho);
        let expected = (1.0 - rho) * f_prev + rho * p.convex_value(0, &x1, &-1.0);
        assert!((bank.surrogate(0).eval(&x1) - expected).abs() < 1e-10);
    }

    #[test]
    fn structured_collapses_to_quadratic_without_split() {
        // The objective of SplitToy declares no split; its structured
        // surrogate must expose an exact quadratic that agrees pointwise.
        let p = split_toy();
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Structured, vec![1.0, 1.0]).unwrap();
        let mut sampler = StateSampler::new(5);
        let x0 = vec![0.2, -0.4];
        let s = p.draw(&mut sampler);
        bank.update(&x0, &[s], 1.0);
        let surr = bank.surrogate(0);
        let quad = surr.as_quadratic().expect("no-split surrogate must be quadratic");
        for _ in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| sampler.standard_normal()).collect();
            assert!((surr.eval(&x) - quad.eval(&x)).abs() < 1e-12);
        }
        assert!(bank.surrogate(1).as_quadratic().is_none(), "split surrogate is not quadratic");
    }

    #[test]
    fn consistency_gap_is_zero_in_deterministic_mode() {
        // Constant sampler + rho = 1: surrogate value and gradient at the
        // anchor coincide with the (deterministic) sample average.
        struct Det {
            domain: Domain,
        }
        impl SampleProblem for Det {
            type State = ();
            fn dim(&self) -> usize {
                2
            }
            fn num_constraints(&self) -> usize {
                1
            }
            fn domain(&self) -> &Domain {
                &self.domain
            }
            fn draw(&self, _: &mut StateSampler) {}
            fn value(&self, i: usize, x: &[f64], _s: &()) -> f64 {
                match i {
                    0 => (x[0] - 1.0).powi(2) + x[1].powi(2),
                    _ => x[0].powi(2) - x[1],
                }
            }
            fn gradient(&self, i: usize, x: &[f64], _s: &()) -> Vec<f64> {
                match i {
                    0 => vec![2.0 * (x[0] - 1.0), 2.0 * x[1]],
                    _ => vec![2.0 * x[0], -1.0],
                }
            }
        }
        let p = Det { domain: Domain::symmetric_box(2, 2.0) };
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Recursive, vec![1.0, 1.0]).unwrap();
        let mut sampler = StateSampler::new(4);
        let x = vec![0.7, -0.1];
        bank.update(&x, &[()], 1.0);
        let gap = consistency_gap(&bank, &p, &x, 5, &mut sampler).unwrap();
        for i in 0..2 {
            assert!(gap.value_gaps[i] < 1e-12, "value gap {i}: {:.3e}", gap.value_gaps[i]);
            assert!(gap.gradient_gaps[i] < 1e-12, "gradient gap {i}: {:.3e}", gap.gradient_gaps[i]);
        }
    }

    #[test]
    fn consistency_gap_at_first_iteration_is_sample_deviation() {
        let p = split_toy();
        let mut bank = SurrogateBank::new(&p, SurrogateKind::Recursive, vec![1.0, 1.0]).unwrap();
        let mut sampler = StateSampler::new(11);
        let x0 = vec![0.3, 0.6];
        let s0 = p.draw(&mut sampler);
        bank.update(&x0, &[s0], 1.0);
        let mut probe = sampler.fork(1);
        let n = 4000;
        let est = saa_estimate(&p, &x0, n, &mut probe).unwrap();
        let mut probe = sampler.fork(1);
        let gap = consistency_gap(&bank, &p, &x0, n, &mut probe).unwrap();
        for i in 0..2 {
            let expected = (p.value(i, &x0, &s0) - est.values[i]).abs();
            assert!(
                (gap.value_gaps[i] - expected).abs() < 1e-12,
                "first-iteration gap must equal the single-sample deviation"
            );
        }
    }

    #[test]
    fn consistency_gap_shrinks_with_run_length() {
        // Miniature of the long-run trend check: same seed, four times the
        // iterations, compare the value-gap average over the last 10%.
        let p = split_toy();
        let schedule = StepSchedule::default_stochastic();
        let mut last_deciles = Vec::new();
        for total in [200usize, 800] {
            let mut bank = SurrogateBank::new(&p, SurrogateKind::Recursive, vec![1.0, 1.0]).unwrap();
            let mut sampler = StateSampler::new(17);
            let mut probe = sampler.fork(99);
            let x = vec![0.25, -0.5];
            let mut acc = 0.0;
            let mut count = 0;
            for t in 0..total {
                let s = p.draw(&mut sampler);
                bank.update(&x, &[s], schedule.rho(t));
                if t >= total - total / 10 {
                    let gap = consistency_gap(&bank, &p, &x, 2000, &mut probe).unwrap();
                    acc += gap.value_gaps[0] + gap.value_gaps[1];
                    count += 1;
                }
            }
            last_deciles.push(acc / count as f64);
        }
        assert!(
            last_deciles[1] < last_deciles[0],
            "gap must shrink with run length: {last_deciles:?}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_recursive_equals_unrolled(seed in 0u64..300, steps in 1usize..10) {
            let mut sampler = StateSampler::new(seed);
            let dim = 3;
            let mut rhos = Vec::new();
            let mut samples = Vec::new();
            for t in 0..steps {
                rhos.push(if t == 0 { 1.0 } else { (1.0 + t as f64).powf(-0.7) });
                let b: Vec<f64> = (0..dim).map(|_| sampler.standard_normal()).collect();
                samples.push(QuadraticSurrogate {
                    q: sampler.standard_normal().abs() + 0.1,
                    b,
                    c: sampler.standard_normal(),
                });
            }
            let mut s = QuadraticSurrogate::zero(dim);
            for (rho, sample) in rhos.iter().zip(&samples) {
                s.blend(*rho, sample);
            }
            let mut expected = QuadraticSurrogate::zero(dim);
            for j in 0..steps {
                let mut w = rhos[j];
                for l in (j + 1)..steps {
                    w *= 1.0 - rhos[l];
                }
                expected.q += w * samples[j].q;
                expected.c += w * samples[j].c;
                linalg::axpy(w, &samples[j].b, &mut expected.b);
            }
            prop_assert!((s.q - expected.q).abs() < 1e-10);
            prop_assert!((s.c - expected.c).abs() < 1e-10);
            prop_assert!(linalg::dist(&s.b, &expected.b) < 1e-10);
        }

        #[test]
        fn prop_surrogates_strongly_convex_along_segments(seed in 0u64..300) {
            let p = split_toy();
            let mut bank = SurrogateBank::new(&p, SurrogateKind::Structured, vec![0.7, 0.7]).unwrap();
            let mut sampler = StateSampler::new(seed);
            let x0 = vec![0.1 * sampler.standard_normal(), 0.1 * sampler.standard_normal()];
            let s = p.draw(&mut sampler);
            bank.update(&x0, &[s], 1.0);
            for i in 0..2 {
                let surr = bank.surrogate(i);
                let sigma = surr.strong_convexity();
                prop_assert!(sigma >= 2.0 * 0.7 - 1e-12);
                let a: Vec<f64> = (0..2).map(|_| sampler.standard_normal()).collect();
                let b: Vec<f64> = (0..2).map(|_| sampler.standard_normal()).collect();
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
                let lhs = surr.eval(&mid);
                let rhs = 0.5 * surr.eval(&a) + 0.5 * surr.eval(&b)
                    - sigma / 8.0 * linalg::dist(&a, &b).powi(2);
                prop_assert!(lhs <= rhs + 1e-9, "segment convexity violated: {} > {}", lhs, rhs);
            }
        }
    }
}
