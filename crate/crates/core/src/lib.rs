//! Solver library for stochastic optimization problems with expectation
//! constraints:
//!
//! ```text
//!     minimize    f_0(x) = E[g_0(x, s)]
//!     subject to  f_i(x) = E[g_i(x, s)] <= 0,   i = 1..m,    x in X,
//! ```
//!
//! where the `g_i` may be non-convex, `X` is compact and convex, and the
//! expectation is over a random state `s` that can only be sampled. The
//! solver maintains one strongly convex surrogate per function, refreshed
//! each iteration from a fresh sample, and alternates between two convex
//! subproblems: minimizing the objective surrogate over the surrogate
//! feasible set when that set is nonempty, and pulling the surrogate
//! constraints down otherwise. Iterates are smoothed with a diminishing
//! step so the surrogates have time to average out the sampling noise.
//!
//! Module layout:
//!
//! * [`linalg`]: small dense complex matrices, Hermitian eigensolver, PSD
//!   projections, Cholesky solves.
//! * [`problem`]: problem and domain abstractions, sampling, SAA estimates,
//!   KKT residuals.
//! * [`surrogate`]: step-size schedules and the two surrogate constructions
//!   (recursive quadratic and structured).
//! * [`subproblem`]: the per-iteration convex solves with certificates.
//! * [`driver`]: the main iteration loop, traces, deterministic mode.
//! * [`parallel`]: block-decoupled problems solved with per-block updates.
//! * [`apps`]: three benchmark problems from multi-user wireless design.
//! * [`diagnostics`]: finite-difference oracles shared by the test suites.

pub mod apps;
pub mod diagnostics;
pub mod driver;
pub mod linalg;
pub mod parallel;
pub mod problem;
pub mod subproblem;
pub mod surrogate;

use thiserror::Error;

/// Errors produced by construction and numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix deviates from Hermitian by {deviation:.3e} (relative, tolerance {tolerance:.1e})")]
    NotHermitian { deviation: f64, tolerance: f64 },
    #[error("matrix is singular or not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },
    #[error("eigensolver did not converge within {0} sweeps")]
    EigDidNotConverge(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid step-size schedule: {0}")]
    InvalidSchedule(String),
    #[error("point of dimension {got} does not match domain dimension {expected}")]
    DomainDim { expected: usize, got: usize },
}
