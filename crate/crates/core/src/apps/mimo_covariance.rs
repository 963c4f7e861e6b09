//! Multi-user MIMO transmit covariance design under imperfect CSI.
//!
//! A base station with `n` antennas serves `K` users through transmit
//! covariance matrices `Q_1..Q_K`. Only a channel estimate is available;
//! the realized channel is the estimate plus a random error, so the rate
//! delivered to each user is a random quantity and the rate floors hold in
//! expectation:
//!
//! ```text
//!     minimize    sum_k Tr(Q_k)
//!     subject to  E[ log(1 + SINR_k(Q, h)) ] >= r_k,     Q_k PSD,
//! ```
//!
//! with `SINR_k = h_k^H Q_k h_k / (sum_{j != k} h_k^H Q_j h_k + sigma_k^2)`.
//! Rewriting the rate floor as `E[g_k] <= 0` splits naturally:
//!
//! ```text
//!     g_k = g_k^cvx + g_k^ncv,
//!     g_k^cvx = r_k - log(sum_j     h_k^H Q_j h_k + sigma_k^2),
//!     g_k^ncv =       log(sum_{j!=k} h_k^H Q_j h_k + sigma_k^2),
//! ```
//!
//! where the first part is convex in `Q` and the second concave. The
//! problem declares this split, so structured surrogates keep the convex
//! part exact and only linearize the interference term.
//!
//! Decision variables live in the `[Re; Im]` embedding of each `Q_k`
//! (`2 n^2` reals per user, users concatenated), and the domain is the
//! product of trace-capped PSD cones.

use num_complex::Complex64;

use crate::driver::RunConfig;
use crate::linalg;
use crate::problem::{saa_estimate, Domain, SampleProblem, StateSampler};
use crate::surrogate::{StepRule, StepSchedule, SurrogateKind};
use crate::Error;

/// `Re(h^H Q h)` read directly from one `[Re; Im]` block. Equals
/// `h^H Q~ h` for the Hermitian part `Q~`, so it is well defined even on
/// off-manifold probes such as finite-difference points.
fn signal_power(block: &[f64], h: &[Complex64]) -> f64 {
    let n = h.len();
    let (re, im) = block.split_at(n * n);
    let mut acc = 0.0;
    for p in 0..n {
        for q in 0..n {
            let c = h[p].conj() * h[q];
            acc += re[p * n + q] * c.re - im[p * n + q] * c.im;
        }
    }
    acc
}

/// Adds `scale * (h h^H)` to one `[Re; Im]` block; this is the embedding
/// gradient of `x -> Re(h^H Q(x) h)` scaled by `scale`.
fn add_scaled_outer(block: &mut [f64], h: &[Complex64], scale: f64) {
    let n = h.len();
    let (re, im) = block.split_at_mut(n * n);
    for p in 0..n {
        for q in 0..n {
            let v = h[p] * h[q].conj();
            re[p * n + q] += scale * v.re;
            im[p * n + q] += scale * v.im;
        }
    }
}

/// Rate-constrained covariance design problem. Registered with the CLI as
/// `ex1-mimo-cov`.
pub struct MimoCovariance {
    nominal: Vec<Vec<Complex64>>,
    error_var: f64,
    noise_var: Vec<f64>,
    rate_targets: Vec<f64>,
    domain: Domain,
}

impl MimoCovariance {
    pub fn new(
        nominal: Vec<Vec<Complex64>>,
        error_var: f64,
        noise_var: Vec<f64>,
        rate_targets: Vec<f64>,
        trace_cap: f64,
    ) -> Result<Self, Error> {
        let users = nominal.len();
        if users == 0 {
            return Err(Error::InvalidParam("need at least one user".into()));
        }
        let n = nominal[0].len();
        if n == 0 || nominal.iter().any(|h| h.len() != n) {
            return Err(Error::InvalidParam("channel estimates must share one antenna count".into()));
        }
        if noise_var.len() != users || rate_targets.len() != users {
            return Err(Error::DimMismatch("per-user parameter lengths differ".into()));
        }
        if noise_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParam("noise variances must be positive".into()));
        }
        if rate_targets.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidParam("rate targets must be positive".into()));
        }
        if !(error_var >= 0.0) {
            return Err(Error::InvalidParam("error variance must be nonnegative".into()));
        }
        let block = Domain::PsdCone { n, trace_cap };
        block.validate()?;
        let domain = Domain::Product(vec![block; users]);
        Ok(MimoCovariance { nominal, error_var, noise_var, rate_targets, domain })
    }

    /// The benchmark instance: 8 antennas, 4 users, unit-variance channel
    /// estimates, error variance 0.002, noise variance 0.1, rate floor 1.
    pub fn benchmark(seed: u64) -> Self {
        let mut rng = StateSampler::new(seed);
        let nominal = (0..4)
            .map(|_| (0..8).map(|_| rng.complex_gaussian(1.0)).collect())
            .collect();
        MimoCovariance::new(nominal, 0.002, vec![0.1; 4], vec![1.0; 4], 100.0)
            .expect("benchmark parameters are valid")
    }

    /// Small instance for quick tests; same structure, fewer dimensions.
    pub fn small(seed: u64, n: usize, users: usize) -> Self {
        let mut rng = StateSampler::new(seed);
        let nominal = (0..users)
            .map(|_| (0..n).map(|_| rng.complex_gaussian(1.0)).collect())
            .collect();
        MimoCovariance::new(nominal, 0.002, vec![0.1; users], vec![1.0; users], 100.0)
            .expect("parameters are valid")
    }

    pub fn antennas(&self) -> usize {
        self.nominal[0].len()
    }

    pub fn users(&self) -> usize {
        self.nominal.len()
    }

    fn block_len(&self) -> usize {
        2 * self.antennas() * self.antennas()
    }

    fn block<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        let len = self.block_len();
        &x[k * len..(k + 1) * len]
    }

    /// `Re(h_k^H Q_j h_k)` for every transmit block `j`.
    fn powers_at(&self, x: &[f64], h_k: &[Complex64]) -> Vec<f64> {
        (0..self.users()).map(|j| signal_power(self.block(x, j), h_k)).collect()
    }

    /// Sums with and without the own-signal term; both are positive because
    /// the noise variance is.
    fn denominators(&self, k: usize, powers: &[f64]) -> (f64, f64) {
        let total: f64 = powers.iter().sum::<f64>() + self.noise_var[k];
        (total, total - powers[k])
    }

    /// Step rules tuned for this benchmark. The surrogate weight decays a
    /// little slower than the iterate smoothing so sampling noise averages
    /// out before the iterates settle.
    pub fn recommended_config(&self, iterations: usize) -> RunConfig {
        let mut config = RunConfig::new(iterations);
        config.schedule =
            StepSchedule::new(StepRule::power(1.0, 0.9), StepRule::power(15.0, 1.0))
                .expect("benchmark schedule is valid");
        config.surrogate = SurrogateKind::Structured;
        config.tau = 0.5;
        config
    }

    /// Feasible starting point: beam along the interference-free directions
    /// of the estimated channels, then double the common power until the
    /// sample-average worst constraint clears `-margin`.
    ///
    /// Orthogonalizing each user's estimate against the others kills the
    /// nominal interference, so rates grow with power and the doubling
    /// always terminates on instances where the targets are reachable.
    pub fn feasible_start(
        &self,
        sampler: &mut StateSampler,
        check_samples: usize,
        margin: f64,
    ) -> Result<Vec<f64>, Error> {
        let users = self.users();
        let mut beams: Vec<Vec<Complex64>> = Vec::with_capacity(users);
        for k in 0..users {
            // Project h_k onto the complement of the span of the other
            // estimates (Gram-Schmidt on the interferers, then subtract).
            let mut basis: Vec<Vec<Complex64>> = Vec::new();
            for (j, h) in self.nominal.iter().enumerate() {
                if j == k {
                    continue;
                }
                let mut b = h.clone();
                for prev in &basis {
                    let coef = linalg::cdot(prev, &b);
                    for (bi, pi) in b.iter_mut().zip(prev) {
                        *bi -= coef * pi;
                    }
                }
                let nrm = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if nrm > 1e-9 {
                    for bi in b.iter_mut() {
                        *bi /= nrm;
                    }
                    basis.push(b);
                }
            }
            let mut w = self.nominal[k].clone();
            for b in &basis {
                let coef = linalg::cdot(b, &w);
                for (wi, bi) in w.iter_mut().zip(b) {
                    *wi -= coef * bi;
                }
            }
            let nrm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nrm <= 1e-9 {
                return Err(Error::InvalidParam(
                    "channel estimates are linearly dependent; no interference-free beam".into(),
                ));
            }
            for wi in w.iter_mut() {
                *wi /= nrm;
            }
            beams.push(w);
        }

        let trace_cap = match &self.domain {
            Domain::Product(parts) => match parts[0] {
                Domain::PsdCone { trace_cap, .. } => trace_cap,
                _ => unreachable!("blocks are PSD cones by construction"),
            },
            _ => unreachable!("domain is a product by construction"),
        };
        let mut power = 0.25;
        while power <= trace_cap {
            let mut x = vec![0.0; self.dim()];
            for (k, w) in beams.iter().enumerate() {
                let len = self.block_len();
                add_scaled_outer(&mut x[k * len..(k + 1) * len], w, power);
            }
            let est = saa_estimate(self, &x, check_samples, sampler)?;
            let worst = est.values[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if worst <= -margin {
                return Ok(x);
            }
            power *= 2.0;
        }
        Err(Error::InvalidParam(format!(
            "rate floors unreachable with beam power up to the trace cap {trace_cap}"
        )))
    }
}

impl SampleProblem for MimoCovariance {
    /// One realized channel vector per user.
    type State = Vec<Vec<Complex64>>;

    fn dim(&self) -> usize {
        self.users() * self.block_len()
    }

    fn num_constraints(&self) -> usize {
        self.users()
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn draw(&self, sampler: &mut StateSampler) -> Self::State {
        self.nominal
            .iter()
            .map(|h| h.iter().map(|&z| z + sampler.complex_gaussian(self.error_var)).collect())
            .collect()
    }

    fn value(&self, i: usize, x: &[f64], s: &Self::State) -> f64 {
        if i == 0 {
            // Total transmit power: sum of real diagonals across blocks.
            let n = self.antennas();
            let len = self.block_len();
            return (0..self.users())
                .map(|k| (0..n).map(|d| x[k * len + d * n + d]).sum::<f64>())
                .sum();
        }
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (total, interference) = self.denominators(k, &powers);
        self.rate_targets[k] - total.ln() + interference.ln()
    }

    fn gradient(&self, i: usize, x: &[f64], s: &Self::State) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if i == 0 {
            let n = self.antennas();
            let len = self.block_len();
            for k in 0..self.users() {
                for d in 0..n {
                    out[k * len + d * n + d] = 1.0;
                }
            }
            return out;
        }
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (total, interference) = self.denominators(k, &powers);
        let len = self.block_len();
        for j in 0..self.users() {
            let mut scale = -1.0 / total;
            if j != k {
                scale += 1.0 / interference;
            }
            add_scaled_outer(&mut out[j * len..(j + 1) * len], &s[k], scale);
        }
        out
    }

    fn has_split(&self, i: usize) -> bool {
        i >= 1
    }

    fn convex_value(&self, i: usize, x: &[f64], s: &Self::State) -> f64 {
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (total, _) = self.denominators(k, &powers);
        self.rate_targets[k] - total.ln()
    }

    fn convex_gradient(&self, i: usize, x: &[f64], s: &Self::State) -> Vec<f64> {
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (total, _) = self.denominators(k, &powers);
        let mut out = vec![0.0; self.dim()];
        let len = self.block_len();
        for j in 0..self.users() {
            add_scaled_outer(&mut out[j * len..(j + 1) * len], &s[k], -1.0 / total);
        }
        out
    }

    fn nonconvex_value(&self, i: usize, x: &[f64], s: &Self::State) -> f64 {
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (_, interference) = self.denominators(k, &powers);
        interference.ln()
    }

    fn nonconvex_gradient(&self, i: usize, x: &[f64], s: &Self::State) -> Vec<f64> {
        let k = i - 1;
        let powers = self.powers_at(x, &s[k]);
        let (_, interference) = self.denominators(k, &powers);
        let mut out = vec![0.0; self.dim()];
        let len = self.block_len();
        for j in 0..self.users() {
            if j == k {
                continue;
            }
            add_scaled_outer(&mut out[j * len..(j + 1) * len], &s[k], 1.0 / interference);
        }
        out
    }
}
