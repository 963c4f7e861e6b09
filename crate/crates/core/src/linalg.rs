//! Small dense complex linear algebra.
//!
//! The solver only ever touches matrices up to about 64x64 (channel Grams,
//! covariance blocks, projection eigenproblems), so everything here is a
//! plain O(n^3) dense kernel: cyclic Jacobi for Hermitian eigendecomposition
//! and an LL^H Cholesky for linear solves. Complex matrices are first-class;
//! the real embedding used by the optimizer lives at the problem boundary,
//! not here.

use num_complex::Complex64;

use crate::Error;

pub type C64 = Complex64;

/// Relative deviation above which a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

const MAX_JACOBI_SWEEPS: usize = 100;

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMat { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a column vector from a slice.
    pub fn col_vec(v: &[C64]) -> Self {
        ComplexMat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn mul(&self, other: &ComplexMat) -> ComplexMat {
        assert_eq!(
            self.cols, other.rows,
            "matrix product shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = ComplexMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &ComplexMat) -> ComplexMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "matrix sum shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &ComplexMat) -> ComplexMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "matrix difference shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: C64) -> ComplexMat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn scale_re(&self, s: f64) -> ComplexMat {
        self.scale(C64::new(s, 0.0))
    }

    pub fn adjoint(&self) -> ComplexMat {
        let mut out = ComplexMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn conj(&self) -> ComplexMat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a = a.conj();
        }
        out
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &ComplexMat) -> ComplexMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "hadamard shape mismatch");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
        out
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square(), "trace of a non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..self.cols {
                acc += self[(i, j)] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Computes `A^H x` without forming the adjoint.
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.rows, x.len(), "adjoint matvec shape mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            for j in 0..self.cols {
                out[j] += self[(i, j)].conj() * xi;
            }
        }
        out
    }

    pub fn col(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> Vec<C64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    /// Rank-one matrix `u v^H`.
    pub fn outer(u: &[C64], v: &[C64]) -> ComplexMat {
        let mut out = ComplexMat::zeros(u.len(), v.len());
        for i in 0..u.len() {
            for j in 0..v.len() {
                out[(i, j)] = u[i] * v[j].conj();
            }
        }
        out
    }

    /// Hermitian part `(A + A^H) / 2`.
    pub fn hermitian_part(&self) -> ComplexMat {
        assert!(self.is_square(), "hermitian part of a non-square matrix");
        let n = self.rows;
        let mut out = ComplexMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
            }
        }
        out
    }

    /// `max |A - A^H| / max(1, fro(A))`, zero for exactly Hermitian input.
    pub fn hermitian_deviation(&self) -> f64 {
        assert!(self.is_square(), "hermitian deviation of a non-square matrix");
        let mut dev = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev / self.frobenius().max(1.0)
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMat {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Square matrix that has been checked (or forced) to be Hermitian.
#[derive(Clone, Debug)]
pub struct HermitianMat(ComplexMat);

impl HermitianMat {
    /// Accepts `m` if it is square and Hermitian within [`HERMITIAN_TOL`].
    pub fn new(m: ComplexMat) -> Result<Self, Error> {
        if !m.is_square() {
            return Err(Error::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        let dev = m.hermitian_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: dev, tolerance: HERMITIAN_TOL });
        }
        Ok(HermitianMat(m.hermitian_part()))
    }

    /// Projects `m` onto the Hermitian subspace, `(m + m^H) / 2`.
    pub fn hermitized(m: &ComplexMat) -> Self {
        HermitianMat(m.hermitian_part())
    }

    pub fn mat(&self) -> &ComplexMat {
        &self.0
    }

    pub fn into_mat(self) -> ComplexMat {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    /// Real trace of a Hermitian matrix.
    pub fn trace_re(&self) -> f64 {
        self.0.trace().re
    }
}

/// Eigendecomposition `A = V diag(values) V^H`, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct Eig {
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors, in the same order.
    pub vectors: ComplexMat,
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Each rotation annihilates one off-diagonal pair; sweeps repeat until the
/// off-diagonal mass falls below n * eps * fro(A). Quadratic convergence
/// makes this reliable at the matrix sizes this crate deals with.
pub fn hermitian_eig(a: &HermitianMat) -> Result<Eig, Error> {
    let n = a.n();
    if n == 0 {
        return Ok(Eig { values: Vec::new(), vectors: ComplexMat::zeros(0, 0) });
    }
    let mut m = a.mat().clone();
    let mut v = ComplexMat::identity(n);
    let fro = m.frobenius();
    if fro == 0.0 {
        return Ok(Eig { values: vec![0.0; n], vectors: v });
    }
    let stop = (n as f64) * f64::EPSILON * fro;
    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() <= stop {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let z = m[(p, q)];
                let zn = z.norm();
                if zn <= f64::EPSILON * fro * 1e-2 {
                    continue;
                }
                // Phase factor turning the 2x2 pivot block real, then a
                // standard symmetric Jacobi rotation on that block.
                let u = z / zn;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * zn);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let su = u * s; // complex sine carries the phase
                // Columns p and q of M and of the accumulated V: right-multiply
                // by U = [[c, s*conj(u)^*], ...] expanded below.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * su.conj();
                    m[(k, q)] = mkp * s + mkq * c * u.conj();
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * su.conj();
                    v[(k, q)] = vkp * s + vkq * c * u.conj();
                }
                // Rows p and q: left-multiply by U^H.
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = mpk * c - mqk * su;
                    m[(q, k)] = mpk * s + mqk * c * u;
                }
                // Clean up rounding drift on the annihilated pair.
                let fixed = (m[(p, q)] + m[(q, p)].conj()) * 0.5;
                m[(p, q)] = fixed;
                m[(q, p)] = fixed.conj();
            }
        }
    }
    if !converged {
        // One last check: the final sweep may have pushed it under.
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if (2.0 * off).sqrt() > stop * 10.0 {
            return Err(Error::EigDidNotConverge(MAX_JACOBI_SWEEPS));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let values_raw: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| values_raw[j].partial_cmp(&values_raw[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| values_raw[i]).collect();
    let mut vectors = ComplexMat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(i, new_j)] = v[(i, old_j)];
        }
    }
    Ok(Eig { values, vectors })
}

/// Nearest positive semidefinite matrix in Frobenius norm.
///
/// The input is first projected onto the Hermitian subspace, then negative
/// eigenvalues are clipped to zero. The composition is the exact Euclidean
/// projection onto the PSD cone viewed in the real entry embedding.
pub fn psd_project(a: &ComplexMat) -> Result<HermitianMat, Error> {
    let h = HermitianMat::hermitized(a);
    let eig = hermitian_eig(&h)?;
    let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    Ok(reassemble(&eig.vectors, &clipped))
}

/// Projection onto `{ Q PSD, tr(Q) <= cap }` in Frobenius norm.
///
/// Shares eigenvectors with the Hermitian part of the input; the eigenvalues
/// are projected onto the simplex-like set `{ l >= 0, sum l <= cap }`.
pub fn psd_project_trace_capped(a: &ComplexMat, cap: f64) -> Result<HermitianMat, Error> {
    assert!(cap >= 0.0, "trace cap must be nonnegative");
    let h = HermitianMat::hermitized(a);
    let eig = hermitian_eig(&h)?;
    let mut vals = eig.values.clone();
    project_eigs_trace_capped(&mut vals, cap);
    Ok(reassemble(&eig.vectors, &vals))
}

/// In-place Euclidean projection of a vector onto `{ l >= 0, sum l <= cap }`.
pub fn project_eigs_trace_capped(vals: &mut [f64], cap: f64) {
    let clipped_sum: f64 = vals.iter().map(|&v| v.max(0.0)).sum();
    if clipped_sum <= cap {
        for v in vals.iter_mut() {
            *v = v.max(0.0);
        }
        return;
    }
    // Water-filling: find theta > 0 with sum max(v - theta, 0) = cap.
    let mut sorted: Vec<f64> = vals.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (k, &vk) in sorted.iter().enumerate() {
        prefix += vk;
        let candidate = (prefix - cap) / (k as f64 + 1.0);
        let next = sorted.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if candidate < vk && candidate >= next {
            theta = candidate;
            break;
        }
    }
    for v in vals.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

fn reassemble(vectors: &ComplexMat, values: &[f64]) -> HermitianMat {
    let n = vectors.rows();
    let mut scaled = vectors.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] *= values[j];
        }
    }
    let m = scaled.mul(&vectors.adjoint());
    HermitianMat::hermitized(&m)
}

/// Cholesky factor `L` (lower triangular, positive real diagonal) of a
/// Hermitian positive definite matrix.
pub fn cholesky(a: &HermitianMat) -> Result<ComplexMat, Error> {
    let n = a.n();
    let m = a.mat();
    let mut l = ComplexMat::zeros(n, n);
    let scale = (0..n).map(|i| m[(i, i)].re.abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= (n as f64) * f64::EPSILON * scale {
            return Err(Error::NotPositiveDefinite { pivot: d, index: j });
        }
        let dj = d.sqrt();
        l[(j, j)] = C64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / dj;
        }
    }
    Ok(l)
}

/// Solves `A X = B` for Hermitian positive definite `A` via Cholesky.
pub fn solve_hermitian_linear(a: &HermitianMat, b: &ComplexMat) -> Result<ComplexMat, Error> {
    let n = a.n();
    assert_eq!(n, b.rows(), "solve shape mismatch: A is {0}x{0}, B has {1} rows", n, b.rows());
    let l = cholesky(a)?;
    let mut x = b.clone();
    // Forward substitution L Y = B.
    for col in 0..x.cols() {
        for i in 0..n {
            let mut acc = x[(i, col)];
            for k in 0..i {
                acc -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = acc / l[(i, i)].re;
        }
        // Back substitution L^H X = Y.
        for i in (0..n).rev() {
            let mut acc = x[(i, col)];
            for k in (i + 1)..n {
                acc -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = acc / l[(i, i)].re;
        }
    }
    Ok(x)
}

/// `sum_i conj(a_i) b_i`.
pub fn cdot(a: &[C64], b: &[C64]) -> C64 {
    assert_eq!(a.len(), b.len(), "complex dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `h^H Q h` for Hermitian `Q`; the result is real up to rounding.
pub fn quadratic_form(h: &[C64], q: &ComplexMat) -> f64 {
    let qh = q.matvec(h);
    cdot(h, &qh).re
}

// Real vector helpers used throughout the optimizer.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "distance length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_complex(rng: &mut ChaCha12Rng) -> C64 {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    fn random_hermitian(rng: &mut ChaCha12Rng, n: usize) -> HermitianMat {
        let m = ComplexMat::from_fn(n, n, |_, _| random_complex(rng));
        HermitianMat::hermitized(&m)
    }

    fn reconstruct(eig: &Eig) -> ComplexMat {
        let n = eig.values.len();
        let mut scaled = eig.vectors.clone();
        for j in 0..n {
            for i in 0..n {
                scaled[(i, j)] *= eig.values[j];
            }
        }
        scaled.mul(&eig.vectors.adjoint())
    }

    #[test]
    fn eig_identity_two_by_two() {
        let a = HermitianMat::new(ComplexMat::identity(2)).unwrap();
        let eig = hermitian_eig(&a).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0]);
    }

    #[test]
    fn eig_diagonal_orders_descending() {
        let mut m = ComplexMat::zeros(2, 2);
        m[(0, 0)] = C64::new(-1.0, 0.0);
        m[(1, 1)] = C64::new(3.0, 0.0);
        let eig = hermitian_eig(&HermitianMat::new(m).unwrap()).unwrap();
        assert_eq!(eig.values, vec![3.0, -1.0]);
        // Eigenvector for 3 is e_2, for -1 is e_1 (up to phase).
        assert!((eig.vectors[(1, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((eig.vectors[(0, 1)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let a = random_hermitian(&mut rng, 4);
        let eig = hermitian_eig(&a).unwrap();
        let diff = reconstruct(&eig).sub(a.mat()).frobenius();
        assert!(
            diff <= 1e-10 * a.mat().frobenius().max(1.0),
            "reconstruction error {diff:.3e} too large"
        );
    }

    #[test]
    fn eig_reconstruction_and_unitarity_across_sizes() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for &n in &[1usize, 2, 3, 5, 8, 13, 21, 34, 64] {
            let a = random_hermitian(&mut rng, n);
            let eig = hermitian_eig(&a).unwrap();
            let scale = a.mat().frobenius().max(1.0);
            let rec = reconstruct(&eig).sub(a.mat()).frobenius();
            assert!(rec <= 1e-10 * scale, "n={n}: reconstruction error {rec:.3e}");
            let vhv = eig.vectors.adjoint().mul(&eig.vectors);
            let unit = vhv.sub(&ComplexMat::identity(n)).frobenius();
            assert!(unit <= 1e-10, "n={n}: V^H V deviates from I by {unit:.3e}");
            for w in eig.values.windows(2) {
                assert!(w[0] >= w[1], "eigenvalues not sorted descending");
            }
        }
    }

    #[test]
    fn eig_rejects_non_square_and_non_hermitian() {
        let rect = ComplexMat::zeros(2, 3);
        assert!(matches!(HermitianMat::new(rect), Err(Error::NotSquare { .. })));
        let mut skew = ComplexMat::identity(2);
        skew[(0, 1)] = C64::new(0.5, 0.0);
        assert!(matches!(HermitianMat::new(skew), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn psd_project_clips_negative_eigenvalue() {
        let mut m = ComplexMat::zeros(2, 2);
        m[(0, 0)] = C64::new(2.0, 0.0);
        m[(1, 1)] = C64::new(-1.0, 0.0);
        let p = psd_project(&m).unwrap();
        assert!((p.mat()[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!(p.mat()[(1, 1)].re.abs() < 1e-12);
        assert!(p.mat()[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn psd_project_fixes_psd_input() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let b = ComplexMat::from_fn(3, 3, |_, _| random_complex(&mut rng));
        let a = b.mul(&b.adjoint()); // PSD by construction
        let p = psd_project(&a).unwrap();
        let diff = p.mat().sub(&a).frobenius();
        assert!(diff <= 1e-10 * a.frobenius(), "PSD input moved by {diff:.3e}");
    }

    // Sampling oracle: no random PSD candidate may sit closer to A than the
    // claimed projection. Candidates are built around the projection with
    // perturbations at several scales, each re-clipped to the cone.
    #[test]
    fn psd_project_beats_ten_thousand_psd_candidates() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let a = random_hermitian(&mut rng, 3).into_mat();
        let p = psd_project(&a).unwrap();
        let best = p.mat().sub(&a).frobenius();
        for i in 0..10_000 {
            let scale = [1e-3, 1e-2, 1e-1, 1.0][i % 4];
            let pert = random_hermitian(&mut rng, 3).into_mat().scale_re(scale);
            let candidate = psd_project(&p.mat().add(&pert)).unwrap();
            let d = candidate.mat().sub(&a).frobenius();
            assert!(
                d >= best - 1e-9,
                "candidate {i} at distance {d:.12} beats projection at {best:.12}"
            );
        }
    }

    #[test]
    fn trace_capped_projection_beats_sampled_candidates() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let a = random_hermitian(&mut rng, 3).into_mat().scale_re(3.0);
        let cap = 1.5;
        let p = psd_project_trace_capped(&a, cap).unwrap();
        assert!(p.trace_re() <= cap + 1e-10, "trace {:.6} exceeds cap", p.trace_re());
        let eig = hermitian_eig(&p).unwrap();
        assert!(eig.values.iter().all(|&l| l >= -1e-12));
        let best = p.mat().sub(&a).frobenius();
        for i in 0..5_000 {
            let scale = [1e-3, 1e-2, 1e-1, 1.0][i % 4];
            let pert = random_hermitian(&mut rng, 3).into_mat().scale_re(scale);
            let candidate = psd_project_trace_capped(&p.mat().add(&pert), cap).unwrap();
            let d = candidate.mat().sub(&a).frobenius();
            assert!(d >= best - 1e-9, "candidate {i} at {d:.12} beats projection at {best:.12}");
        }
    }

    #[test]
    fn psd_project_is_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..20 {
            let a = random_hermitian(&mut rng, 4).into_mat();
            let p1 = psd_project(&a).unwrap();
            let p2 = psd_project(p1.mat()).unwrap();
            let diff = p2.mat().sub(p1.mat()).frobenius();
            assert!(diff <= 1e-10 * p1.mat().frobenius().max(1.0));
        }
    }

    #[test]
    fn solve_identity_returns_rhs() {
        let a = HermitianMat::new(ComplexMat::identity(3)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let b = ComplexMat::from_fn(3, 2, |_, _| random_complex(&mut rng));
        let x = solve_hermitian_linear(&a, &b).unwrap();
        assert!(x.sub(&b).frobenius() < 1e-14);
    }

    #[test]
    fn solve_scaled_identity_halves_rhs() {
        let a = HermitianMat::new(ComplexMat::identity(2).scale_re(2.0)).unwrap();
        let b = ComplexMat::identity(2);
        let x = solve_hermitian_linear(&a, &b).unwrap();
        assert!(x.sub(&ComplexMat::identity(2).scale_re(0.5)).frobenius() < 1e-14);
    }

    #[test]
    fn solve_random_pd_has_small_residual() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let b = ComplexMat::from_fn(6, 6, |_, _| random_complex(&mut rng));
        let a_mat = b.mul(&b.adjoint()).add(&ComplexMat::identity(6).scale_re(0.1));
        let a = HermitianMat::new(a_mat.clone()).unwrap();
        let rhs = ComplexMat::from_fn(6, 3, |_, _| random_complex(&mut rng));
        let x = solve_hermitian_linear(&a, &rhs).unwrap();
        let resid = a_mat.mul(&x).sub(&rhs).frobenius();
        assert!(resid <= 1e-10 * rhs.frobenius().max(1.0), "residual {resid:.3e}");
    }

    #[test]
    fn solve_rejects_singular_matrix() {
        let m = ComplexMat::zeros(2, 2);
        let a = HermitianMat::new(m).unwrap();
        let b = ComplexMat::identity(2);
        assert!(matches!(solve_hermitian_linear(&a, &b), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn trace_is_cyclic_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        for _ in 0..50 {
            let a = ComplexMat::from_fn(4, 4, |_, _| random_complex(&mut rng));
            let b = ComplexMat::from_fn(4, 4, |_, _| random_complex(&mut rng));
            let t1 = a.mul(&b).trace();
            let t2 = b.mul(&a).trace();
            let scale = t1.norm().max(1.0);
            assert!((t1 - t2).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn quadratic_form_matches_explicit_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let q = random_hermitian(&mut rng, 3).into_mat();
        let h: Vec<C64> = (0..3).map(|_| random_complex(&mut rng)).collect();
        let direct = quadratic_form(&h, &q);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                acc += h[i].conj() * q[(i, j)] * h[j];
            }
        }
        assert!((direct - acc.re).abs() < 1e-12 * acc.norm().max(1.0));
        assert!(acc.im.abs() < 1e-12, "Hermitian quadratic form should be real");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn prop_eig_reconstructs(seed in 0u64..1000, n in 1usize..9) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let a = random_hermitian(&mut rng, n);
            let eig = hermitian_eig(&a).unwrap();
            let scale = a.mat().frobenius().max(1.0);
            prop_assert!(reconstruct(&eig).sub(a.mat()).frobenius() <= 1e-10 * scale);
        }

        #[test]
        fn prop_eigenvalue_projection_feasible_and_no_worse(
            vals in proptest::collection::vec(-5.0f64..5.0, 1..8),
            cap in 0.1f64..10.0,
        ) {
            let mut projected = vals.clone();
            project_eigs_trace_capped(&mut projected, cap);
            prop_assert!(projected.iter().all(|&v| v >= 0.0));
            prop_assert!(projected.iter().sum::<f64>() <= cap + 1e-9);
            // No coordinate-wise clipped feasible point should be closer.
            let naive: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
            if naive.iter().sum::<f64>() <= cap {
                let d_proj: f64 = projected.iter().zip(&vals).map(|(p, v)| (p - v) * (p - v)).sum();
                let d_naive: f64 = naive.iter().zip(&vals).map(|(p, v)| (p - v) * (p - v)).sum();
                prop_assert!(d_proj <= d_naive + 1e-9);
            }
        }
    }
}
