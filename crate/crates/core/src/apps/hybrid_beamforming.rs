//! Hybrid analog-digital downlink precoding with phase shifters.
//!
//! A base station drives `M` antennas from `S <= M` RF chains. The analog
//! stage is a phase-shifter network, a matrix `F` whose entries `e^{j
//! theta_{m,s}}` all have unit modulus and stay fixed across channel
//! realizations. The digital stage is a regularized zero-forcing map
//! recomputed for every realized channel `H = [h_1 .. h_K]^H`:
//!
//! ```text
//!     G = F^H H^H (H F F^H H^H + (K/P) I)^{-1} P^{1/2},
//! ```
//!
//! with columns scaled by the per-user power levels `p`. The long-term
//! variables `(Theta, p)` maximize the ergodic sum rate while the average
//! transmit power stays inside the budget `P`:
//!
//! ```text
//!     minimize    -E[ sum_k ln(1 + |h_k^H F g_k|^2
//!                              / (sum_{i != k} |h_k^H F g_i|^2 + 1)) ]
//!     subject to   E[ Tr(F G G^H F^H) ] - P <= 0.
//! ```
//!
//! Rates are in nats. Because the baseband stage adapts to each draw, both
//! functions see the channel only through the ridge solve, and a sample
//! evaluation reduces to K-sized blocks after one `M x M` Gram product.
//! With the effective gains `T_{k,i} = h_k^H F F^H hf_i`, where `hf_i^H`
//! is row `i` of `H_F = (H F F^H H^H + (K/P) I)^{-1} H`, the received
//! powers are `|h_k^H F g_i|^2 = p_i |T_{k,i}|^2` and the transmit power is
//! `sum_i p_i ||row_i(H_F F F^H)||^2`.
//!
//! Decision variables are the `M*S` phases row-major, then the `K` power
//! levels. Phases live in the box `[-pi, pi]` (the map is periodic, the
//! projection clips), powers in `[0, 10 P]`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::driver::RunConfig;
use crate::linalg::{self, ComplexMat, HermitianMat};
use crate::problem::{Domain, SampleProblem, StateSampler};
use crate::surrogate::{StepRule, StepSchedule, SurrogateKind};
use crate::Error;

/// Rows of `mat` scaled by the matching entry of `d`, i.e. left
/// multiplication by `Diag(d)`.
fn scale_rows(mat: &ComplexMat, d: &[f64]) -> ComplexMat {
    ComplexMat::from_fn(mat.rows(), mat.cols(), |r, c| mat[(r, c)] * d[r])
}

/// Hybrid precoding benchmark. Registered with the CLI as `ex3-hybrid-bf`.
pub struct HybridBeamforming {
    chains: usize,
    users: usize,
    power_budget: f64,
    /// Square-root factor of the antenna correlation: channels are drawn
    /// as `h_k = corr_root z_k` with `z_k` standard complex Gaussian.
    corr_root: ComplexMat,
    domain: Domain,
}

/// Intermediates shared by every sample evaluation. Downstream of the
/// ridge solve everything is `K x M` or smaller.
struct Pieces {
    /// Analog precoder `F`.
    f: ComplexMat,
    /// Channel rows, row `k` is `h_k^H`.
    h: ComplexMat,
    /// `H Phi` for `Phi = F F^H`.
    h_phi: ComplexMat,
    /// Ridge-regularized rows `(H Phi H^H + (K/P) I)^{-1} H`.
    hf: ComplexMat,
    /// `H_F Phi`; the squared norm of row `i` prices user i's power.
    w: ComplexMat,
    /// Effective gain table `T_{k,i} = h_k^H Phi hf_i`.
    t: ComplexMat,
}

impl HybridBeamforming {
    pub fn new(
        corr_root: ComplexMat,
        chains: usize,
        users: usize,
        power_budget: f64,
    ) -> Result<Self, Error> {
        let antennas = corr_root.rows();
        if antennas == 0 || corr_root.cols() == 0 {
            return Err(Error::InvalidParam("correlation root must be nonempty".into()));
        }
        if corr_root.frobenius() == 0.0 {
            return Err(Error::InvalidParam("correlation root must be nonzero".into()));
        }
        if chains == 0 || chains > antennas {
            return Err(Error::InvalidParam("RF chain count must lie in 1..=antennas".into()));
        }
        if users == 0 {
            return Err(Error::InvalidParam("need at least one user".into()));
        }
        if !(power_budget > 0.0 && power_budget.is_finite()) {
            return Err(Error::InvalidParam("power budget must be positive and finite".into()));
        }
        let phases = antennas * chains;
        let mut lo = vec![-PI; phases];
        let mut hi = vec![PI; phases];
        lo.extend(vec![0.0; users]);
        hi.extend(vec![10.0 * power_budget; users]);
        let domain = Domain::Box { lo, hi };
        domain.validate()?;
        Ok(HybridBeamforming { chains, users, power_budget, corr_root, domain })
    }

    /// Instance with the correlated channel `h_k = sqrt(M/r) U z_k`, where
    /// `U` is a random `M x r` matrix with orthonormal columns. The scaling
    /// keeps the mean channel energy at `M` for every correlation rank `r`.
    pub fn with_random_correlation(
        antennas: usize,
        chains: usize,
        users: usize,
        corr_rank: usize,
        power_budget: f64,
        seed: u64,
    ) -> Result<Self, Error> {
        if corr_rank == 0 || corr_rank > antennas {
            return Err(Error::InvalidParam("correlation rank must lie in 1..=antennas".into()));
        }
        let mut rng = StateSampler::new(seed);
        let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(corr_rank);
        for _ in 0..corr_rank {
            let mut c: Vec<Complex64> =
                (0..antennas).map(|_| rng.complex_gaussian(1.0)).collect();
            for prev in &cols {
                let coef = linalg::cdot(prev, &c);
                for (ci, pi) in c.iter_mut().zip(prev) {
                    *ci -= coef * pi;
                }
            }
            let nrm = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if nrm < 1e-9 {
                return Err(Error::InvalidParam("random correlation basis degenerated".into()));
            }
            for ci in c.iter_mut() {
                *ci /= nrm;
            }
            cols.push(c);
        }
        let scale = (antennas as f64 / corr_rank as f64).sqrt();
        let root = ComplexMat::from_fn(antennas, corr_rank, |r, c| cols[c][r] * scale);
        HybridBeamforming::new(root, chains, users, power_budget)
    }

    /// The benchmark instance: 64 antennas, 8 chains, 4 users, unit power
    /// budget, rank-8 antenna correlation.
    pub fn benchmark(seed: u64) -> Self {
        HybridBeamforming::with_random_correlation(64, 8, 4, 8, 1.0, seed)
            .expect("benchmark parameters are valid")
    }

    /// Desk-size instance for quick tests: 16 antennas, 4 chains, 2 users.
    pub fn small(seed: u64) -> Self {
        HybridBeamforming::with_random_correlation(16, 4, 2, 4, 1.0, seed)
            .expect("parameters are valid")
    }

    pub fn antennas(&self) -> usize {
        self.corr_root.rows()
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn users(&self) -> usize {
        self.users
    }

    fn phase_len(&self) -> usize {
        self.antennas() * self.chains
    }

    /// Analog precoder `F(Theta)`; entries are `e^{j theta}`, so each has
    /// unit modulus wherever the phases sit.
    pub fn rf_precoder(&self, x: &[f64]) -> ComplexMat {
        ComplexMat::from_fn(self.antennas(), self.chains, |m, s| {
            Complex64::from_polar(1.0, x[m * self.chains + s])
        })
    }

    fn pieces(&self, x: &[f64], chans: &[Vec<Complex64>]) -> Pieces {
        let f = self.rf_precoder(x);
        let h = ComplexMat::from_fn(self.users, self.antennas(), |k, j| chans[k][j].conj());
        let phi = f.mul(&f.adjoint());
        let h_phi = h.mul(&phi);
        let mut gram = h_phi.mul(&h.adjoint());
        let ridge = self.users as f64 / self.power_budget;
        for d in 0..self.users {
            gram.data_mut()[d * self.users + d] += ridge;
        }
        let hf = linalg::solve_hermitian_linear(&HermitianMat::hermitized(&gram), &h)
            .expect("the K/P ridge keeps the baseband system positive definite");
        let w = hf.mul(&phi);
        let t = h_phi.mul(&hf.adjoint());
        Pieces { f, h, h_phi, hf, w, t }
    }

    /// Signal-plus-noise and interference-plus-noise sums per user, from
    /// the gain table and the power split.
    fn denominators(&self, p: &[f64], t: &ComplexMat) -> (Vec<f64>, Vec<f64>) {
        let mut full = vec![1.0; self.users];
        let mut rest = vec![1.0; self.users];
        for k in 0..self.users {
            for i in 0..self.users {
                let q = p[i] * t[(k, i)].norm_sqr();
                full[k] += q;
                if i != k {
                    rest[k] += q;
                }
            }
        }
        (full, rest)
    }

    /// Gradient of the negated sample sum rate.
    ///
    /// Each received power `p_i |T_{k,i}|^2` depends on the phases through
    /// `Phi = F F^H` twice, directly and through the ridge solve behind
    /// `H_F`. Chaining through both, its phase gradient is `2 Im[F* o
    /// (K_{k,i} F)]` for the Hermitian kernel
    ///
    /// ```text
    ///     K_{k,i} = Sym[ p_i T_{k,i} (h_k - H^H W h_k) hf_i^H ],
    /// ```
    ///
    /// `Sym[Z] = Z + Z^H`. The kernels are rank one up to symmetrization
    /// and the rate weights attach per `(k, i)`, so one pass per user
    /// accumulates the whole weighted sum as `u v^H + v u^H` applied to
    /// `F`. `W h_k` is the conjugated row `k` of the gain table, already in
    /// hand.
    fn rate_gradient(&self, p: &[f64], pieces: &Pieces) -> Vec<f64> {
        let m = self.antennas();
        let (full, rest) = self.denominators(p, &pieces.t);
        // Sensitivity of the negated rate sum to the received power
        // p_i |T_{k,i}|^2.
        let weight = |k: usize, i: usize| {
            let mut c = 1.0 / full[k];
            if i != k {
                c -= 1.0 / rest[k];
            }
            -c
        };
        let mut out = vec![0.0; self.dim()];
        for i in 0..self.users {
            out[self.phase_len() + i] =
                (0..self.users).map(|k| weight(k, i) * pieces.t[(k, i)].norm_sqr()).sum();
        }
        let mut acc = ComplexMat::zeros(m, self.chains);
        for k in 0..self.users {
            let trow = pieces.t.row(k);
            let wh: Vec<Complex64> = trow.iter().map(|z| z.conj()).collect();
            let feedback = pieces.h.adjoint_matvec(&wh);
            let mut u: Vec<Complex64> = (0..m).map(|j| pieces.h[(k, j)].conj()).collect();
            for (uj, fj) in u.iter_mut().zip(&feedback) {
                *uj -= fj;
            }
            let mut v = vec![Complex64::new(0.0, 0.0); m];
            for i in 0..self.users {
                let coef = weight(k, i) * p[i] * trow[i];
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj += (coef * pieces.hf[(i, j)]).conj();
                }
            }
            let fv = pieces.f.adjoint_matvec(&v);
            let fu = pieces.f.adjoint_matvec(&u);
            for j in 0..m {
                for c in 0..self.chains {
                    let add = u[j] * fv[c].conj() + v[j] * fu[c].conj();
                    acc.data_mut()[j * self.chains + c] += add;
                }
            }
        }
        for j in 0..m {
            for c in 0..self.chains {
                out[j * self.chains + c] = 2.0 * (pieces.f[(j, c)].conj() * acc[(j, c)]).im;
            }
        }
        out
    }

    /// Gradient of the sample transmit power. The power prices
    /// `||row_i(W)||^2` fill the `p` block directly; the phase block
    /// follows the same kernel pattern as the rate with the identity in
    /// place of `h_k h_k^H`, which keeps it in matrix form:
    ///
    /// ```text
    ///     grad_Theta = -Im[ F* o (2 H_F^H A H_F F - 2 B F) ],
    ///     A = Sym[H Phi W^H Diag(p)],   B = Sym[W^H Diag(p) H_F].
    /// ```
    fn power_gradient(&self, p: &[f64], pieces: &Pieces) -> Vec<f64> {
        let m = self.antennas();
        let k_users = self.users;
        let mut out = vec![0.0; self.dim()];
        for i in 0..k_users {
            out[self.phase_len() + i] =
                pieces.w.row(i).iter().map(|z| z.norm_sqr()).sum();
        }
        let mut a0 = pieces.h_phi.mul(&pieces.w.adjoint());
        for r in 0..k_users {
            for c in 0..k_users {
                a0.data_mut()[r * k_users + c] *= p[c];
            }
        }
        let a = a0.add(&a0.adjoint());
        let hf_f = pieces.hf.mul(&pieces.f);
        let w_f = pieces.w.mul(&pieces.f);
        let cf = pieces
            .hf
            .adjoint()
            .mul(&a.mul(&hf_f))
            .sub(&pieces.w.adjoint().mul(&scale_rows(&hf_f, p)))
            .sub(&pieces.hf.adjoint().mul(&scale_rows(&w_f, p)))
            .scale_re(2.0);
        for j in 0..m {
            for c in 0..self.chains {
                out[j * self.chains + c] = -(pieces.f[(j, c)].conj() * cf[(j, c)]).im;
            }
        }
        out
    }

    /// Step rules tuned for this benchmark: the surrogate weight decays as
    /// `1/(1+t)^(2/3)`, the iterate averaging as `2/(2+t)`. With no convex
    /// split declared the recursive surrogate is the running linearization
    /// plus the proximal term, so every subproblem is an all-quadratic
    /// instance with one constraint and takes the closed-form dual path.
    pub fn recommended_config(&self, iterations: usize) -> RunConfig {
        let mut config = RunConfig::new(iterations);
        config.schedule =
            StepSchedule::new(StepRule::power(1.0, 2.0 / 3.0), StepRule::power(2.0, 1.0))
                .expect("benchmark schedule is valid");
        config.surrogate = SurrogateKind::Recursive;
        config.tau = 1.0;
        config
    }

    /// Strictly feasible starting point: random phases and a uniform power
    /// split scaled so the sample-average transmit power sits at 90% of
    /// the budget. The constraint is linear in `p` with nonnegative
    /// coefficients, so the scaling lands where the measurement says.
    pub fn feasible_start(
        &self,
        sampler: &mut StateSampler,
        check_draws: usize,
    ) -> Result<Vec<f64>, Error> {
        if check_draws == 0 {
            return Err(Error::InvalidParam("need at least one calibration draw".into()));
        }
        let mut x = self.domain.sample_within(sampler)?;
        for v in x[self.phase_len()..].iter_mut() {
            *v = 1.0;
        }
        let mut mean = 0.0;
        for _ in 0..check_draws {
            let s = self.draw(sampler);
            mean += self.value(1, &x, &s) + self.power_budget;
        }
        mean /= check_draws as f64;
        if !(mean > 0.0) {
            return Err(Error::InvalidParam(
                "channel draws carry no power; correlation root is degenerate".into(),
            ));
        }
        let level = (0.9 * self.power_budget / mean).min(10.0 * self.power_budget);
        for v in x[self.phase_len()..].iter_mut() {
            *v = level;
        }
        Ok(x)
    }
}

impl SampleProblem for HybridBeamforming {
    /// One realized channel vector per user.
    type State = Vec<Vec<Complex64>>;

    fn dim(&self) -> usize {
        self.phase_len() + self.users
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn draw(&self, sampler: &mut StateSampler) -> Self::State {
        (0..self.users)
            .map(|_| {
                let z: Vec<Complex64> = (0..self.corr_root.cols())
                    .map(|_| sampler.complex_gaussian(1.0))
                    .collect();
                self.corr_root.matvec(&z)
            })
            .collect()
    }

    fn value(&self, i: usize, x: &[f64], s: &Self::State) -> f64 {
        let pieces = self.pieces(x, s);
        let p = &x[self.phase_len()..];
        if i == 0 {
            let (full, rest) = self.denominators(p, &pieces.t);
            return -full.iter().zip(&rest).map(|(f, r)| f.ln() - r.ln()).sum::<f64>();
        }
        let mut power = -self.power_budget;
        for k in 0..self.users {
            power += p[k] * pieces.w.row(k).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        power
    }

    fn gradient(&self, i: usize, x: &[f64], s: &Self::State) -> Vec<f64> {
        let pieces = self.pieces(x, s);
        let p = &x[self.phase_len()..];
        if i == 0 {
            self.rate_gradient(p, &pieces)
        } else {
            self.power_gradient(p, &pieces)
        }
    }
}
