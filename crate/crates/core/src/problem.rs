//! Problem abstractions: feasible domains, state sampling, sample-average
//! estimates, and approximate KKT residuals.
//!
//! A problem supplies per-sample functions `g_i(x, s)` for `i = 0..=m`
//! (index 0 is the objective) together with gradients in a flat real
//! parameterization. Complex-valued decision variables are carried through
//! the `[Re; Im]` embedding defined here; stacking real and imaginary parts
//! keeps Euclidean norms equal to Frobenius norms, so proximal terms and
//! projections mean the same thing on either side of the boundary.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::linalg::{self, ComplexMat};
use crate::Error;

/// Constraint is treated as active in multiplier fitting when its sample
/// average value exceeds `-ACTIVE_TOL`.
pub const ACTIVE_TOL: f64 = 1e-4;

/// Membership tolerance used by [`Domain::member`], relative to `1 + |x|`.
pub const MEMBER_TOL: f64 = 1e-9;

/// Compact convex feasible sets with computable Euclidean projections.
#[derive(Clone, Debug)]
pub enum Domain {
    /// Axis-aligned box `lo <= x <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Euclidean ball around `center`.
    Ball { center: Vec<f64>, radius: f64 },
    /// Hermitian PSD block with a trace cap, embedded as `2 n^2` reals
    /// (`[Re(Q) row-major; Im(Q) row-major]`).
    PsdCone { n: usize, trace_cap: f64 },
    /// Cartesian product of blocks, concatenated coordinates.
    Product(Vec<Domain>),
}

impl Domain {
    /// Box `[-r, r]^dim`, the default enclosure for nominally unbounded
    /// variables.
    pub fn symmetric_box(dim: usize, r: f64) -> Domain {
        Domain::Box { lo: vec![-r; dim], hi: vec![r; dim] }
    }

    pub fn origin_ball(dim: usize, radius: f64) -> Domain {
        Domain::Ball { center: vec![0.0; dim], radius }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::PsdCone { n, .. } => 2 * n * n,
            Domain::Product(parts) => parts.iter().map(|p| p.dim()).sum(),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match self {
            Domain::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::DimMismatch("box bound lengths differ".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidParam("box bounds must be finite with lo <= hi".into()));
                }
            }
            Domain::Ball { radius, .. } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidParam("ball radius must be positive and finite".into()));
                }
            }
            Domain::PsdCone { n, trace_cap } => {
                if *n == 0 {
                    return Err(Error::InvalidParam("PSD block size must be positive".into()));
                }
                if !(*trace_cap > 0.0) {
                    return Err(Error::InvalidParam("trace cap must be positive".into()));
                }
            }
            Domain::Product(parts) => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection, in place.
    pub fn project(&self, x: &mut [f64]) -> Result<(), Error> {
        if x.len() != self.dim() {
            return Err(Error::DomainDim { expected: self.dim(), got: x.len() });
        }
        match self {
            Domain::Box { lo, hi } => {
                for ((xi, &l), &h) in x.iter_mut().zip(lo).zip(hi) {
                    *xi = xi.clamp(l, h);
                }
            }
            Domain::Ball { center, radius } => {
                let d: f64 =
                    x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum::<f64>().sqrt();
                if d > *radius {
                    let scale = radius / d;
                    for (xi, ci) in x.iter_mut().zip(center) {
                        *xi = ci + (*xi - ci) * scale;
                    }
                }
            }
            Domain::PsdCone { n, trace_cap } => {
                let m = decode_complex(x, *n);
                let p = if trace_cap.is_finite() {
                    linalg::psd_project_trace_capped(&m, *trace_cap)?
                } else {
                    linalg::psd_project(&m)?
                };
                encode_complex(p.mat(), x);
            }
            Domain::Product(parts) => {
                let mut offset = 0;
                for p in parts {
                    let d = p.dim();
                    p.project(&mut x[offset..offset + d])?;
                    offset += d;
                }
            }
        }
        Ok(())
    }

    pub fn projected(&self, x: &[f64]) -> Result<Vec<f64>, Error> {
        let mut y = x.to_vec();
        self.project(&mut y)?;
        Ok(y)
    }

    /// Membership test: `x` belongs to the set iff its projection does not
    /// move it (relative tolerance [`MEMBER_TOL`]). With this definition
    /// `project(x) == x` and `member(x)` agree by construction.
    pub fn member(&self, x: &[f64]) -> Result<bool, Error> {
        let y = self.projected(x)?;
        Ok(linalg::dist(x, &y) <= MEMBER_TOL * (1.0 + linalg::norm(x)))
    }

    /// Draws a point of the set. The distribution is arbitrary but
    /// deterministic given the sampler state; used for certificates and tests.
    pub fn sample_within(&self, sampler: &mut StateSampler) -> Result<Vec<f64>, Error> {
        match self {
            Domain::Box { lo, hi } => Ok(lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| {
                    let u: f64 = sampler.rng().gen_range(0.0..1.0);
                    l + u * (h - l)
                })
                .collect()),
            Domain::Ball { center, radius } => {
                let n = center.len();
                let mut dir: Vec<f64> = (0..n).map(|_| sampler.standard_normal()).collect();
                let nrm = linalg::norm(&dir).max(f64::MIN_POSITIVE);
                let u: f64 = sampler.rng().gen_range(0.0f64..1.0);
                let r = radius * u.powf(1.0 / n as f64) / nrm;
                for (d, c) in dir.iter_mut().zip(center) {
                    *d = c + *d * r;
                }
                Ok(dir)
            }
            Domain::PsdCone { n, .. } => {
                let dim = 2 * n * n;
                let mut x: Vec<f64> = (0..dim).map(|_| sampler.standard_normal()).collect();
                self.project(&mut x)?;
                Ok(x)
            }
            Domain::Product(parts) => {
                let mut out = Vec::with_capacity(self.dim());
                for p in parts {
                    out.extend(p.sample_within(sampler)?);
                }
                Ok(out)
            }
        }
    }
}

/// Reads a complex `n x n` matrix from the `[Re; Im]` embedding. The result
/// is not forced Hermitian; callers that need a Hermitian matrix should take
/// the Hermitian part so that off-manifold probes (finite differences)
/// remain well defined.
pub fn decode_complex(x: &[f64], n: usize) -> ComplexMat {
    assert_eq!(x.len(), 2 * n * n, "embedding length mismatch");
    ComplexMat::from_fn(n, n, |i, j| Complex64::new(x[i * n + j], x[n * n + i * n + j]))
}

/// Writes a complex matrix into the `[Re; Im]` embedding.
pub fn encode_complex(m: &ComplexMat, out: &mut [f64]) {
    let n = m.rows();
    assert_eq!(out.len(), 2 * n * n, "embedding length mismatch");
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)].re;
            out[n * n + i * n + j] = m[(i, j)].im;
        }
    }
}

/// Reads a complex vector from `[Re; Im]` stacking.
pub fn decode_complex_vec(x: &[f64]) -> Vec<Complex64> {
    assert!(x.len() % 2 == 0, "embedding length must be even");
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

pub fn encode_complex_vec(v: &[Complex64], out: &mut [f64]) {
    let n = v.len();
    assert_eq!(out.len(), 2 * n, "embedding length mismatch");
    for i in 0..n {
        out[i] = v[i].re;
        out[n + i] = v[i].im;
    }
}

/// Seeded stream of random states. Identical seeds yield bit-identical
/// streams; `fork` derives statistically independent substreams so that
/// diagnostic sampling never perturbs the algorithmic stream.
pub struct StateSampler {
    seed: u64,
    rng: ChaCha12Rng,
}

impl StateSampler {
    pub fn new(seed: u64) -> Self {
        StateSampler { seed, rng: ChaCha12Rng::seed_from_u64(seed) }
    }

    /// Independent substream labeled by `tag`, derived from the root seed.
    pub fn fork(&self, tag: u64) -> Self {
        StateSampler::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> Complex64 {
        let s = (variance / 2.0).sqrt();
        let re: f64 = self.standard_normal();
        let im: f64 = self.standard_normal();
        Complex64::new(re * s, im * s)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stochastic program `min E[g_0] s.t. E[g_i] <= 0 over X`, described
/// through per-sample function and gradient evaluations.
pub trait SampleProblem: Sync {
    /// Random state consumed by the sample functions (channel realizations,
    /// noise vectors, ...). Deterministic problems use `()` or a constant.
    type State: Clone + Send + Sync;

    fn dim(&self) -> usize;

    /// Number of expectation constraints `m` (the objective is not counted).
    fn num_constraints(&self) -> usize;

    fn domain(&self) -> &Domain;

    fn draw(&self, sampler: &mut StateSampler) -> Self::State;

    /// Per-sample value `g_i(x, s)`; `i = 0` is the objective,
    /// `1..=m` the constraints.
    fn value(&self, i: usize, x: &[f64], s: &Self::State) -> f64;

    /// Gradient of `g_i(x, s)` in the flat real parameterization.
    fn gradient(&self, i: usize, x: &[f64], s: &Self::State) -> Vec<f64>;

    /// Whether `g_i` is exposed as `g_i = g_i^cvx + g_i^ncv` with a convex
    /// part kept exact in structured surrogates.
    fn has_split(&self, _i: usize) -> bool {
        false
    }

    /// Convex component of the split. Only called when `has_split(i)`.
    fn convex_value(&self, i: usize, _x: &[f64], _s: &Self::State) -> f64 {
        unimplemented!("g_{i} does not declare a convex/nonconvex split")
    }

    fn convex_gradient(&self, i: usize, _x: &[f64], _s: &Self::State) -> Vec<f64> {
        unimplemented!("g_{i} does not declare a convex/nonconvex split")
    }

    /// Remaining smooth component of the split. Only called when `has_split(i)`.
    fn nonconvex_value(&self, i: usize, _x: &[f64], _s: &Self::State) -> f64 {
        unimplemented!("g_{i} does not declare a convex/nonconvex split")
    }

    fn nonconvex_gradient(&self, i: usize, _x: &[f64], _s: &Self::State) -> Vec<f64> {
        unimplemented!("g_{i} does not declare a convex/nonconvex split")
    }

    /// True when the declared convex component of `g_i` is identically zero;
    /// structured surrogates then reduce to exact quadratics and the
    /// subproblem can use closed-form paths.
    fn convex_component_is_zero(&self, _i: usize) -> bool {
        false
    }
}

/// Sample-average values and gradients of all functions at `x`.
#[derive(Clone, Debug)]
pub struct SaaEstimate {
    /// `values[i]` approximates `f_i(x)`, index 0 the objective.
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Monte Carlo estimate of all `f_i(x)` and gradients from `n` fresh draws.
pub fn saa_estimate<P: SampleProblem>(
    problem: &P,
    x: &[f64],
    n: usize,
    sampler: &mut StateSampler,
) -> Result<SaaEstimate, Error> {
    if n == 0 {
        return Err(Error::InvalidParam("sample-average estimate needs at least one draw".into()));
    }
    let funcs = problem.num_constraints() + 1;
    let dim = problem.dim();
    let mut values = vec![0.0; funcs];
    let mut gradients = vec![vec![0.0; dim]; funcs];
    for _ in 0..n {
        let s = problem.draw(sampler);
        for i in 0..funcs {
            values[i] += problem.value(i, x, &s);
            let g = problem.gradient(i, x, &s);
            linalg::axpy(1.0, &g, &mut gradients[i]);
        }
    }
    let inv = 1.0 / n as f64;
    for v in values.iter_mut() {
        *v *= inv;
    }
    for g in gradients.iter_mut() {
        for gi in g.iter_mut() {
            *gi *= inv;
        }
    }
    Ok(SaaEstimate { values, gradients, samples: n })
}

/// Approximate stationarity and feasibility report at a point.
#[derive(Clone, Debug)]
pub struct KktReport {
    /// Norm of the projected-gradient residual of the fitted Lagrangian.
    pub stationarity: f64,
    /// `max_i f_i(x)` over the constraints (negative values mean slack);
    /// zero when the problem has no constraints.
    pub violation: f64,
    /// Fitted multipliers, zero on constraints inactive beyond [`ACTIVE_TOL`].
    pub multipliers: Vec<f64>,
}

/// Measures approximate KKT satisfaction at `x` from an `n`-sample SAA
/// estimate.
///
/// Multipliers are fitted in two stages: a nonnegative least-squares fit of
/// `grad f_0 + sum_i lambda_i grad f_i` to zero over the active set, then a
/// local refinement of the projected residual
/// `|x - proj_X(x - grad f_0 - sum lambda_i grad f_i)|`, which accounts for
/// the normal cone of the domain at `x`.
pub fn kkt_residual<P: SampleProblem>(
    problem: &P,
    x: &[f64],
    n: usize,
    sampler: &mut StateSampler,
) -> Result<KktReport, Error> {
    let est = saa_estimate(problem, x, n, sampler)?;
    kkt_residual_from_estimate(problem.domain(), x, &est)
}

/// Same as [`kkt_residual`] but starting from an existing estimate; also the
/// deterministic entry point (pass an exact estimate).
pub fn kkt_residual_from_estimate(
    domain: &Domain,
    x: &[f64],
    est: &SaaEstimate,
) -> Result<KktReport, Error> {
    let m = est.values.len() - 1;
    let violation = if m == 0 {
        0.0
    } else {
        est.values[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let active: Vec<usize> =
        (1..=m).filter(|&i| est.values[i] >= -ACTIVE_TOL).collect();

    let residual_norm = |domain: &Domain, lam: &[f64]| -> Result<f64, Error> {
        let mut step = x.to_vec();
        for (j, s) in step.iter_mut().enumerate() {
            let mut g = est.gradients[0][j];
            for (a, &i) in active.iter().enumerate() {
                g += lam[a] * est.gradients[i][j];
            }
            *s -= g;
        }
        domain.project(&mut step)?;
        Ok(linalg::dist(x, &step))
    };

    if active.is_empty() {
        let r = residual_norm(domain, &[])?;
        return Ok(KktReport { stationarity: r, violation, multipliers: vec![0.0; m] });
    }

    // Stage 1: NNLS fit of the unprojected stationarity condition by
    // projected gradient on 0.5 |g_0 + G lam|^2.
    let k = active.len();
    let mut lam = vec![0.0; k];
    let gram: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| active.iter().map(|&j| linalg::dot(&est.gradients[i], &est.gradients[j])).collect())
        .collect();
    let rhs: Vec<f64> =
        active.iter().map(|&i| linalg::dot(&est.gradients[i], &est.gradients[0])).collect();
    let lipschitz: f64 = gram.iter().enumerate().map(|(a, row)| row[a]).sum::<f64>().max(1e-12);
    for _ in 0..2000 {
        let mut moved = 0.0f64;
        for a in 0..k {
            let mut grad = rhs[a];
            for b in 0..k {
                grad += gram[a][b] * lam[b];
            }
            let new = (lam[a] - grad / lipschitz).max(0.0);
            moved = moved.max((new - lam[a]).abs());
            lam[a] = new;
        }
        if moved <= 1e-14 * (1.0 + linalg::norm(&lam)) {
            break;
        }
    }

    // Stage 2: refine against the projected residual, which the NNLS stage
    // ignores. Numeric coordinate descent; the dimension is at most m.
    let mut best = residual_norm(domain, &lam)?;
    let zero = vec![0.0; k];
    let at_zero = residual_norm(domain, &zero)?;
    if at_zero < best {
        lam = zero;
        best = at_zero;
    }
    let mut scale = (linalg::norm(&lam) + 1.0) * 0.5;
    for _round in 0..40 {
        let mut improved = false;
        for a in 0..k {
            for dir in [-1.0, 1.0] {
                let mut cand = lam.clone();
                cand[a] = (cand[a] + dir * scale).max(0.0);
                let r = residual_norm(domain, &cand)?;
                if r < best - 1e-15 {
                    best = r;
                    lam = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            scale *= 0.5;
            if scale < 1e-10 {
                break;
            }
        }
    }

    let mut multipliers = vec![0.0; m];
    for (a, &i) in active.iter().enumerate() {
        multipliers[i - 1] = lam[a];
    }
    Ok(KktReport { stationarity: best, violation, multipliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `g_0 = |x - c|^2 (+ noise * x_0)`, `g_1 = 1 - |x|^2 + noise * x_1`:
    /// the standard toy with a non-convex constraint. Noise scale 0 makes it
    /// deterministic.
    struct Toy {
        domain: Domain,
        center: Vec<f64>,
        noise: f64,
    }

    impl Toy {
        fn new(noise: f64) -> Self {
            Toy {
                domain: Domain::symmetric_box(2, 2.0),
                center: vec![0.25, 0.0],
                noise,
            }
        }
    }

    impl SampleProblem for Toy {
        type State = Vec<f64>;
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn domain(&self) -> &Domain {
            &self.domain
        }
        fn draw(&self, sampler: &mut StateSampler) -> Vec<f64> {
            (0..2).map(|_| self.noise * sampler.standard_normal()).collect()
        }
        fn value(&self, i: usize, x: &[f64], s: &Vec<f64>) -> f64 {
            match i {
                0 => linalg::dist(x, &self.center).powi(2) + s[0] * x[0],
                1 => 1.0 - linalg::norm_sq(x) + s[1] * x[1],
                _ => unreachable!(),
            }
        }
        fn gradient(&self, i: usize, x: &[f64], s: &Vec<f64>) -> Vec<f64> {
            match i {
                0 => vec![2.0 * (x[0] - self.center[0]) + s[0], 2.0 * (x[1] - self.center[1])],
                1 => vec![-2.0 * x[0], -2.0 * x[1] + s[1]],
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn saa_on_deterministic_problem_is_exact_for_any_n() {
        let p = Toy::new(0.0);
        let x = vec![0.7, -0.3];
        let mut sampler = StateSampler::new(1);
        for n in [1usize, 7, 100] {
            let est = saa_estimate(&p, &x, n, &mut sampler).unwrap();
            let s = vec![0.0, 0.0];
            assert!((est.values[0] - p.value(0, &x, &s)).abs() < 1e-15);
            assert!((est.values[1] - p.value(1, &x, &s)).abs() < 1e-15);
        }
    }

    #[test]
    fn saa_mean_of_additive_noise_obeys_lln() {
        // E[s * x] = 0; a fixed-seed estimate must land within 3 sigma / sqrt(N).
        let p = Toy::new(1.0);
        let x = vec![1.0, 1.0];
        let n = 100_000;
        let mut sampler = StateSampler::new(99);
        let est = saa_estimate(&p, &x, n, &mut sampler).unwrap();
        let exact0 = linalg::dist(&x, &p.center).powi(2);
        let tol = 3.0 / (n as f64).sqrt();
        assert!(
            (est.values[0] - exact0).abs() <= tol,
            "estimate off by {:.3e}, tolerance {:.3e}",
            (est.values[0] - exact0).abs(),
            tol
        );
    }

    #[test]
    fn saa_rejects_zero_draws() {
        let p = Toy::new(0.0);
        let mut sampler = StateSampler::new(1);
        assert!(saa_estimate(&p, &[0.0, 0.0], 0, &mut sampler).is_err());
    }

    #[test]
    fn sampler_streams_are_reproducible_and_forks_disjoint() {
        let mut a = StateSampler::new(7);
        let mut b = StateSampler::new(7);
        let xs: Vec<f64> = (0..16).map(|_| a.standard_normal()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.standard_normal()).collect();
        assert_eq!(xs, ys, "same seed must give the same stream");
        let mut f1 = StateSampler::new(7).fork(1);
        let zs: Vec<f64> = (0..16).map(|_| f1.standard_normal()).collect();
        assert_ne!(xs, zs, "fork must not replay the parent stream");
    }

    #[test]
    fn kkt_residual_vanishes_at_unconstrained_minimizer() {
        // min |x - c|^2 over a box that contains c; no constraints.
        struct Quad {
            domain: Domain,
        }
        impl SampleProblem for Quad {
            type State = ();
            fn dim(&self) -> usize {
                2
            }
            fn num_constraints(&self) -> usize {
                0
            }
            fn domain(&self) -> &Domain {
                &self.domain
            }
            fn draw(&self, _: &mut StateSampler) {}
            fn value(&self, _i: usize, x: &[f64], _s: &()) -> f64 {
                (x[0] - 0.3).powi(2) + (x[1] + 0.4).powi(2)
            }
            fn gradient(&self, _i: usize, x: &[f64], _s: &()) -> Vec<f64> {
                vec![2.0 * (x[0] - 0.3), 2.0 * (x[1] + 0.4)]
            }
        }
        let p = Quad { domain: Domain::symmetric_box(2, 1.0) };
        let mut sampler = StateSampler::new(3);
        let report = kkt_residual(&p, &[0.3, -0.4], 10, &mut sampler).unwrap();
        assert!(report.stationarity <= 1e-8, "stationarity {:.3e}", report.stationarity);
        assert_eq!(report.violation, 0.0);
    }

    #[test]
    fn kkt_residual_absorbs_inward_gradient_at_box_face() {
        // min x_0 over [0,1]^2 at x = (0, 0.5): the gradient points inward,
        // the normal cone absorbs it, residual ~ 0.
        struct Lin {
            domain: Domain,
        }
        impl SampleProblem for Lin {
            type State = ();
            fn dim(&self) -> usize {
                2
            }
            fn num_constraints(&self) -> usize {
                0
            }
            fn domain(&self) -> &Domain {
                &self.domain
            }
            fn draw(&self, _: &mut StateSampler) {}
            fn value(&self, _i: usize, x: &[f64], _s: &()) -> f64 {
                x[0]
            }
            fn gradient(&self, _i: usize, _x: &[f64], _s: &()) -> Vec<f64> {
                vec![1.0, 0.0]
            }
        }
        let p = Lin { domain: Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] } };
        let mut sampler = StateSampler::new(3);
        let report = kkt_residual(&p, &[0.0, 0.5], 1, &mut sampler).unwrap();
        assert!(report.stationarity <= 1e-12, "stationarity {:.3e}", report.stationarity);
    }

    #[test]
    fn kkt_residual_small_at_known_qcqp_solution() {
        // min |x - (0.25, 0)|^2 s.t. 1 - |x|^2 <= 0: the minimizer sits on
        // the unit circle at (1, 0) with multiplier 0.75.
        let p = Toy::new(0.0);
        let mut sampler = StateSampler::new(3);
        let report = kkt_residual(&p, &[1.0, 0.0], 1, &mut sampler).unwrap();
        assert!(report.stationarity <= 1e-3, "stationarity {:.3e}", report.stationarity);
        assert!(report.violation.abs() <= 1e-12);
        assert!((report.multipliers[0] - 0.75).abs() <= 1e-2, "multiplier {:?}", report.multipliers);
    }

    #[test]
    fn member_and_project_agree() {
        let mut sampler = StateSampler::new(21);
        let domains = vec![
            Domain::symmetric_box(3, 1.5),
            Domain::origin_ball(4, 2.0),
            Domain::PsdCone { n: 3, trace_cap: 5.0 },
            Domain::Product(vec![Domain::symmetric_box(2, 1.0), Domain::origin_ball(3, 0.5)]),
        ];
        for d in &domains {
            d.validate().unwrap();
            for _ in 0..20 {
                let raw: Vec<f64> = (0..d.dim()).map(|_| 3.0 * sampler.standard_normal()).collect();
                let proj = d.projected(&raw).unwrap();
                assert!(d.member(&proj).unwrap(), "projection must be a member: {d:?}");
                let inside = d.sample_within(&mut sampler).unwrap();
                assert!(d.member(&inside).unwrap(), "sample_within must be a member: {d:?}");
            }
        }
        // A point well outside is not a member.
        let far = vec![10.0; 3];
        assert!(!Domain::symmetric_box(3, 1.5).member(&far).unwrap());
    }

    #[test]
    fn psd_block_projection_is_psd_with_capped_trace() {
        let d = Domain::PsdCone { n: 3, trace_cap: 2.0 };
        let mut sampler = StateSampler::new(5);
        let raw: Vec<f64> = (0..d.dim()).map(|_| sampler.standard_normal() * 2.0).collect();
        let proj = d.projected(&raw).unwrap();
        let q = decode_complex(&proj, 3);
        let h = linalg::HermitianMat::new(q.clone()).expect("projection must be Hermitian");
        let eig = linalg::hermitian_eig(&h).unwrap();
        assert!(eig.values.iter().all(|&l| l >= -1e-10));
        assert!(h.trace_re() <= 2.0 + 1e-9);
        assert!(q.hermitian_deviation() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_projection_is_nonexpansive(seed in 0u64..500) {
            let mut sampler = StateSampler::new(seed);
            let domains = vec![
                Domain::symmetric_box(4, 1.0),
                Domain::origin_ball(4, 1.3),
                Domain::PsdCone { n: 2, trace_cap: 3.0 },
            ];
            for d in &domains {
                let a: Vec<f64> = (0..d.dim()).map(|_| 2.5 * sampler.standard_normal()).collect();
                let b: Vec<f64> = (0..d.dim()).map(|_| 2.5 * sampler.standard_normal()).collect();
                let pa = d.projected(&a).unwrap();
                let pb = d.projected(&b).unwrap();
                prop_assert!(linalg::dist(&pa, &pb) <= linalg::dist(&a, &b) + 1e-10);
            }
        }

        #[test]
        fn prop_same_seed_same_draw(seed in 0u64..500) {
            let p = Toy::new(1.0);
            let mut s1 = StateSampler::new(seed);
            let mut s2 = StateSampler::new(seed);
            let a = p.draw(&mut s1);
            let b = p.draw(&mut s2);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn prop_complex_embedding_round_trips(seed in 0u64..500) {
            let mut sampler = StateSampler::new(seed);
            let x: Vec<f64> = (0..18).map(|_| sampler.standard_normal()).collect();
            let m = decode_complex(&x, 3);
            let mut back = vec![0.0; 18];
            encode_complex(&m, &mut back);
            prop_assert_eq!(x, back);
        }
    }
}
