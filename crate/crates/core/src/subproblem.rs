//! Strongly convex subproblem solvers.
//!
//! Each outer iteration minimizes the surrogate objective subject to the
//! surrogate constraints over the domain. The solver first minimizes the
//! worst constraint surrogate (the feasibility subproblem). If the best
//! achievable worst-constraint value `alpha` is nonpositive the constrained
//! objective subproblem is solved; otherwise the feasibility minimizer
//! itself becomes the update, which steers iterates toward the feasible
//! region before optimizing.
//!
//! Both subproblems run an augmented Lagrangian outer loop whose inner
//! minimizations use an accelerated projected-gradient method with
//! backtracking and adaptive restart. In the feasibility subproblem the
//! auxiliary level variable is eliminated in closed form: for fixed `x` the
//! optimal level solves a one-dimensional water-filling equation, and the
//! envelope theorem turns the remaining minimization over `x` into a smooth
//! problem whose gradient is a simplex-weighted combination of constraint
//! gradients.
//!
//! When the surrogates are isotropic quadratics the subproblems collapse:
//! for any multiplier vector the Lagrangian is again an isotropic quadratic,
//! so its minimizer over a projectable set is a single projection and only
//! the multipliers need to be searched. With one constraint that search is a
//! scalar bisection; with several it is concave maximization over a handful
//! of dual variables, done by projected gradient ascent. These paths are
//! exact in `x` given the multipliers and are preferred whenever available;
//! the augmented Lagrangian loop remains the fallback for non-quadratic
//! surrogates and for dual searches that fail to close their gap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::problem::Domain;
use crate::surrogate::{QuadraticSurrogate, Surrogate};

/// Which subproblem produced the iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    Objective,
    Feasibility,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Target on the projected fixed-point residual.
    pub tol: f64,
    /// Inner iteration budget per subproblem solve.
    pub max_inner: usize,
    /// Multiplier-update rounds per subproblem solve.
    pub max_outer: usize,
    pub penalty_init: f64,
    pub penalty_max: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_inner: 10_000,
            max_outer: 100,
            penalty_init: 10.0,
            penalty_max: 1e10,
        }
    }
}

/// Solution of one subproblem. `value` is the surrogate objective value for
/// objective solves and the worst constraint value for feasibility solves.
#[derive(Clone, Debug)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub multipliers: Vec<f64>,
    pub inner_iterations: usize,
    pub residual: f64,
}

/// Outcome of one full iteration step (feasibility probe plus the update
/// actually taken).
#[derive(Clone, Debug)]
pub struct StepResult {
    pub kind: UpdateKind,
    pub solution: SubproblemSolution,
    /// Best achievable worst-constraint value; `None` when unconstrained.
    pub feasibility_alpha: Option<f64>,
}

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error(
        "subproblem stalled after {used} inner iterations \
         (best residual {residual:.3e}, target {tol:.1e})"
    )]
    NoConvergence { used: usize, residual: f64, tol: f64, best: Box<SubproblemSolution> },
    #[error(transparent)]
    Numeric(#[from] crate::Error),
}

/// Multipliers, penalties, and curvature estimates carried between outer
/// iterations. Warm starts cut the augmented Lagrangian rounds from dozens
/// to a handful once the run settles.
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub x: Vec<f64>,
    feas_lambda: Vec<f64>,
    obj_lambda: Vec<f64>,
    feas_penalty: f64,
    obj_penalty: f64,
    feas_lipschitz: f64,
    obj_lipschitz: f64,
}

impl WarmStart {
    pub fn new(x0: Vec<f64>, num_constraints: usize) -> Self {
        WarmStart {
            x: x0,
            feas_lambda: vec![0.0; num_constraints],
            obj_lambda: vec![0.0; num_constraints],
            feas_penalty: 10.0,
            obj_penalty: 10.0,
            feas_lipschitz: 1.0,
            obj_lipschitz: 1.0,
        }
    }
}

/// Stationarity, feasibility, and complementarity residuals of a candidate
/// primal-dual pair for the surrogate subproblem.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

pub fn kkt_certificate(
    objective: &dyn Surrogate,
    constraints: &[&dyn Surrogate],
    x: &[f64],
    multipliers: &[f64],
    domain: &Domain,
) -> Result<Certificate, crate::Error> {
    let n = x.len();
    let mut grad = objective.grad(x);
    let mut buf = vec![0.0; n];
    let mut feasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for (con, &lam) in constraints.iter().zip(multipliers) {
        let v = con.eval(x);
        feasibility = feasibility.max(v);
        complementarity = complementarity.max((lam * v).abs());
        con.grad_into(x, &mut buf);
        linalg::axpy(lam, &buf, &mut grad);
    }
    let mut stepped = x.to_vec();
    for j in 0..n {
        stepped[j] -= grad[j];
    }
    domain.project(&mut stepped)?;
    Ok(Certificate {
        stationarity: linalg::dist(x, &stepped),
        feasibility: feasibility.max(0.0),
        complementarity,
    })
}

struct Inner {
    x: Vec<f64>,
    iterations: usize,
    residual: f64,
    lipschitz: f64,
}

/// Accelerated projected-gradient loop with backtracking and gradient-based
/// restart. Stops on the unit-step fixed-point residual
/// `|x - P(x - grad)| <= tol`.
fn fista<F>(
    domain: &Domain,
    x0: &[f64],
    mut value_grad: F,
    tol: f64,
    max_iter: usize,
    l0: f64,
) -> Result<Inner, crate::Error>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    domain.project(&mut x)?;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut l = l0.clamp(1e-8, 1e16);
    let mut gy = vec![0.0; n];
    let mut gc = vec![0.0; n];
    let mut cand = vec![0.0; n];
    let mut best_x = x.clone();
    let mut best_res = f64::INFINITY;

    let check = |p: &[f64], g: &[f64]| -> Result<f64, crate::Error> {
        let mut stepped = p.to_vec();
        linalg::axpy(-1.0, g, &mut stepped);
        domain.project(&mut stepped)?;
        Ok(linalg::dist(p, &stepped))
    };

    if max_iter == 0 {
        let _ = value_grad(&x, &mut gy);
        let residual = check(&x, &gy)?;
        return Ok(Inner { x, iterations: 0, residual, lipschitz: l });
    }

    for k in 0..max_iter {
        let fy = value_grad(&y, &mut gy);
        loop {
            cand.copy_from_slice(&y);
            linalg::axpy(-1.0 / l, &gy, &mut cand);
            domain.project(&mut cand)?;
            let fc = value_grad(&cand, &mut gc);
            let mut quad = fy;
            let mut dist_sq = 0.0;
            for j in 0..n {
                let d = cand[j] - y[j];
                quad += gy[j] * d;
                dist_sq += d * d;
            }
            quad += 0.5 * l * dist_sq;
            if fc <= quad + 1e-12 * (1.0 + fy.abs()) || l >= 1e16 {
                break;
            }
            l *= 2.0;
        }
        let residual = check(&cand, &gc)?;
        if residual < best_res {
            best_res = residual;
            best_x.copy_from_slice(&cand);
        }
        if residual <= tol {
            return Ok(Inner { x: cand, iterations: k + 1, residual, lipschitz: l });
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mut beta = (t - 1.0) / t_next;
        let mut restart_dot = 0.0;
        for j in 0..n {
            restart_dot += (y[j] - cand[j]) * (cand[j] - x[j]);
        }
        if restart_dot > 0.0 {
            beta = 0.0;
            t = 1.0;
        } else {
            t = t_next;
        }
        for j in 0..n {
            y[j] = cand[j] + beta * (cand[j] - x[j]);
        }
        x.copy_from_slice(&cand);
        l = (l * 0.9).max(1e-8);
    }
    Ok(Inner { x: best_x, iterations: max_iter, residual: best_res, lipschitz: l })
}

/// Solves the water-filling equation
/// `sum_i max(0, lambda_i + c (vals_i - alpha)) = 1` for the level `alpha`
/// and writes the resulting simplex weights into `w`.
fn waterfill_level(vals: &[f64], lambda: &[f64], c: f64, w: &mut [f64]) -> f64 {
    let m = vals.len();
    debug_assert!(m > 0);
    let mut idx: Vec<usize> = (0..m).collect();
    let breakpoint = |i: usize| vals[i] + lambda[i] / c;
    idx.sort_by(|&a, &b| breakpoint(b).partial_cmp(&breakpoint(a)).unwrap());
    let mut sum_l = 0.0;
    let mut sum_f = 0.0;
    let mut alpha = 0.0;
    for k in 1..=m {
        let i = idx[k - 1];
        sum_l += lambda[i];
        sum_f += vals[i];
        alpha = (sum_l + c * sum_f - 1.0) / (c * k as f64);
        if k == m || alpha >= breakpoint(idx[k]) {
            break;
        }
    }
    for i in 0..m {
        w[i] = (lambda[i] + c * (vals[i] - alpha)).max(0.0);
    }
    debug_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 * (1.0 + c));
    alpha
}

fn quad_minimizer_projected(
    quad: &QuadraticSurrogate,
    domain: &Domain,
) -> Result<Vec<f64>, crate::Error> {
    let mut x = quad.unconstrained_minimizer().expect("quadratic must be strongly convex");
    domain.project(&mut x)?;
    Ok(x)
}

fn stationarity_residual(
    grads: &[(&dyn Surrogate, f64)],
    x: &[f64],
    domain: &Domain,
) -> Result<f64, crate::Error> {
    let n = x.len();
    let mut total = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for (s, weight) in grads {
        s.grad_into(x, &mut buf);
        linalg::axpy(*weight, &buf, &mut total);
    }
    let mut stepped = x.to_vec();
    linalg::axpy(-1.0, &total, &mut stepped);
    domain.project(&mut stepped)?;
    Ok(linalg::dist(x, &stepped))
}

fn all_quadratics(surrs: &[&dyn Surrogate]) -> Option<Vec<QuadraticSurrogate>> {
    surrs.iter().map(|s| s.as_quadratic()).collect()
}

/// Euclidean projection onto the probability simplex, in place.
fn project_simplex(w: &mut [f64]) {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    for v in w.iter_mut() {
        *v = (*v - theta).max(0.0);
    }
}

/// Minimizer over the domain of `base + sum_i w_i quads_i`, exact because a
/// nonnegative combination of isotropic quadratics is again one: complete
/// the square, project.
fn combo_minimizer(
    base: Option<&QuadraticSurrogate>,
    quads: &[QuadraticSurrogate],
    w: &[f64],
    domain: &Domain,
    x: &mut Vec<f64>,
) -> Result<(), crate::Error> {
    let n = quads.first().map_or_else(|| base.expect("combo needs terms").b.len(), |q| q.b.len());
    let mut q = 0.0;
    let mut b = vec![0.0; n];
    if let Some(o) = base {
        q += o.q;
        b.copy_from_slice(&o.b);
    }
    for (quad, &wi) in quads.iter().zip(w) {
        if wi != 0.0 {
            q += wi * quad.q;
            linalg::axpy(wi, &quad.b, &mut b);
        }
    }
    debug_assert!(q > 0.0, "combination lost strong convexity");
    x.clear();
    x.extend(b.iter().map(|bi| -bi / (2.0 * q)));
    domain.project(x)?;
    Ok(())
}

/// Solves the small symmetric positive definite system `g d = r` by
/// unpivoted Cholesky. `None` when a pivot degenerates, which the callers
/// treat as "skip the Newton step".
fn solve_small_spd(mut g: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let k = r.len();
    for i in 0..k {
        for j in 0..i {
            let s = g[i][j] - (0..j).map(|t| g[i][t] * g[j][t]).sum::<f64>();
            g[i][j] = s / g[j][j];
        }
        let d = g[i][i] - (0..i).map(|t| g[i][t] * g[i][t]).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        g[i][i] = d.sqrt();
    }
    for i in 0..k {
        let s = r[i] - (0..i).map(|t| g[i][t] * r[t]).sum::<f64>();
        r[i] = s / g[i][i];
    }
    for i in (0..k).rev() {
        let s = r[i] - (i + 1..k).map(|t| g[t][i] * r[t]).sum::<f64>();
        r[i] = s / g[i][i];
    }
    Some(r)
}

/// Feasibility subproblem for all-quadratic constraints via its simplex
/// dual: `min_x max_i f_i = max_{w in simplex} min_x sum_i w_i f_i(x)`, with
/// the inner minimum exact per weight vector. Returns `None` when the dual
/// ascent cannot close the minimax gap within its budget.
fn dual_feasibility_quadratic(
    quads: &[QuadraticSurrogate],
    surrs: &[&dyn Surrogate],
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<Option<SubproblemSolution>, crate::Error> {
    let m = quads.len();
    let mut w = warm.feas_lambda.clone();
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        w = vec![1.0 / m as f64; m];
    } else {
        project_simplex(&mut w);
    }

    let mut x = Vec::new();
    let mut evals = 0usize;
    let eval_at = |w: &[f64], x: &mut Vec<f64>| -> Result<(Vec<f64>, f64), crate::Error> {
        combo_minimizer(None, quads, w, domain, x)?;
        let vals: Vec<f64> = quads.iter().map(|q| q.eval(x)).collect();
        let h = vals.iter().zip(w).map(|(v, wi)| v * wi).sum::<f64>();
        Ok((vals, h))
    };

    let (mut vals, mut h) = eval_at(&w, &mut x)?;
    evals += 1;
    // The duality gap is measured at the scale of the dual value, so allow
    // a floating-point floor proportional to it; the Armijo test gets the
    // same allowance, otherwise large dual values make every sufficient
    // increase unmeasurable and the line search halves itself to death.
    let gap_tol = (opts.tol * 10.0).max(1e-10);
    let fp_gap = |alpha: f64| gap_tol.max(1e-11 * (1.0 + alpha.abs()));
    let mut step = 1.0f64;
    let mut converged = false;

    // Phase one: projected gradient ascent, gradient = constraint values at
    // the inner minimizer. This closes the gap quickly on mild instances but
    // saturates once increments of h fall below its floating-point
    // resolution; at that point the weights are localized only to about
    // sqrt(eps), which on steep instances leaves a primal gap orders above
    // the tolerance. A stagnation counter hands such cases to the polish
    // phase instead of burning the budget.
    let mut h_best = h;
    let mut since_best = 0usize;
    loop {
        let alpha_true = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if alpha_true - h <= fp_gap(alpha_true) {
            converged = true;
            break;
        }
        if evals >= 1_000 || since_best >= 25 {
            break;
        }
        let slack = 1e-12 * (1.0 + h.abs());
        let mut advanced = false;
        while step > 1e-18 {
            let mut w_new = w.clone();
            linalg::axpy(step, &vals, &mut w_new);
            project_simplex(&mut w_new);
            let move_sq = linalg::dist(&w_new, &w).powi(2);
            if move_sq == 0.0 {
                break;
            }
            let (vals_new, h_new) = eval_at(&w_new, &mut x)?;
            evals += 1;
            if h_new >= h + 0.1 * move_sq / step - slack {
                w = w_new;
                vals = vals_new;
                h = h_new;
                step *= 1.5;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
        if h > h_best + slack {
            h_best = h;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    // Phase two: pairwise polish. For each pair of weights, the dual
    // restricted to mass transfer between them is concave in the transfer
    // with derivative vals_i - vals_j, so bisecting on the derivative sign
    // recovers the split to near machine precision even where comparing
    // dual values no longer resolves anything. Sweep over pairs until the
    // gap closes or stops contracting.
    if !converged {
        let mut gap_prev = f64::INFINITY;
        'polish: while evals < 3_600 {
            for i in 0..m {
                for j in (i + 1)..m {
                    let span = w[i] + w[j];
                    if span <= 0.0 {
                        continue;
                    }
                    let mut wt = w.clone();
                    wt[i] = 0.0;
                    wt[j] = span;
                    let (vt, _) = eval_at(&wt, &mut x)?;
                    evals += 1;
                    let t_star = if vt[i] - vt[j] <= 0.0 {
                        0.0
                    } else {
                        wt[i] = span;
                        wt[j] = 0.0;
                        let (vt, _) = eval_at(&wt, &mut x)?;
                        evals += 1;
                        if vt[i] - vt[j] >= 0.0 {
                            span
                        } else {
                            let (mut lo, mut hi) = (0.0, span);
                            for _ in 0..55 {
                                let mid = 0.5 * (lo + hi);
                                wt[i] = mid;
                                wt[j] = span - mid;
                                let (vt, _) = eval_at(&wt, &mut x)?;
                                evals += 1;
                                if vt[i] - vt[j] > 0.0 {
                                    lo = mid;
                                } else {
                                    hi = mid;
                                }
                            }
                            0.5 * (lo + hi)
                        }
                    };
                    w[i] = t_star;
                    w[j] = span - t_star;
                }
            }
            let refreshed = eval_at(&w, &mut x)?;
            evals += 1;
            vals = refreshed.0;
            h = refreshed.1;
            let alpha_true = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let gap = alpha_true - h;
            if gap <= fp_gap(alpha_true) {
                converged = true;
                break 'polish;
            }
            if gap >= 0.5 * gap_prev {
                break 'polish;
            }
            gap_prev = gap;
        }
    }

    if !converged {
        return Ok(None);
    }
    let alpha_true = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<(&dyn Surrogate, f64)> =
        surrs.iter().zip(&w).map(|(&s, &wi)| (s, wi)).collect();
    let residual = stationarity_residual(&weights, &x, domain)?;
    warm.x.copy_from_slice(&x);
    warm.feas_lambda = w.clone();
    Ok(Some(SubproblemSolution {
        x,
        value: alpha_true,
        multipliers: w,
        inner_iterations: evals,
        residual,
    }))
}

/// Objective subproblem for all-quadratic surrogates via its Lagrange dual:
/// ascend `g(lambda) = min_x f_0 + sum_i lambda_i f_i` over the nonnegative
/// orthant. Returns `None` when multipliers blow up (surrogate feasible set
/// is empty or has no interior) or the ascent stalls; callers fall back to
/// the augmented Lagrangian.
fn dual_objective_quadratic(
    obj: &QuadraticSurrogate,
    quads: &[QuadraticSurrogate],
    obj_surr: &dyn Surrogate,
    surrs: &[&dyn Surrogate],
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<Option<SubproblemSolution>, crate::Error> {
    let mut lambda: Vec<f64> = warm
        .obj_lambda
        .iter()
        .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
        .collect();

    let mut x = Vec::new();
    let mut evals = 0usize;
    let eval_at =
        |lam: &[f64], x: &mut Vec<f64>| -> Result<(Vec<f64>, f64), crate::Error> {
            combo_minimizer(Some(obj), quads, lam, domain, x)?;
            let vals: Vec<f64> = quads.iter().map(|q| q.eval(x)).collect();
            let g = obj.eval(x) + vals.iter().zip(lam).map(|(v, li)| v * li).sum::<f64>();
            Ok((vals, g))
        };

    let (mut vals, mut g) = eval_at(&lambda, &mut x)?;
    evals += 1;
    let viol_tol = (opts.tol * 10.0).max(1e-10);
    let comp_tol = (opts.tol * 100.0).max(1e-6);
    // Complementarity is scaled per coordinate by 1 + lambda_i, the usual
    // interior-point convention: near-degenerate instances push multipliers
    // into the hundreds, and demanding a raw product below tolerance there
    // would require active values below what any solver resolves.
    let meets = |vals: &[f64], lambda: &[f64], g: f64| -> bool {
        let violation = vals.iter().cloned().fold(0.0f64, f64::max);
        let complementarity = vals
            .iter()
            .zip(lambda)
            .map(|(&v, &li)| (li * v).abs() / (1.0 + li))
            .fold(0.0f64, f64::max);
        violation <= viol_tol && complementarity <= comp_tol.max(1e-11 * (1.0 + g.abs()))
    };
    let mut step = 1.0f64;
    let mut converged = false;

    // Phase one: projected gradient ascent on g, gradient = constraint
    // values at the inner minimizer. Like the feasibility dual this
    // saturates at sqrt(eps) relative accuracy in the multipliers, which on
    // steep instances leaves the active constraint values jittering well
    // above tolerance; a stagnation counter hands over to the polish phase.
    let mut g_best = g;
    let mut since_best = 0usize;
    loop {
        if meets(&vals, &lambda, g) {
            converged = true;
            break;
        }
        if evals >= 1_000 || since_best >= 25 || lambda.iter().any(|&l| l > 1e12) {
            break;
        }
        let slack = 1e-12 * (1.0 + g.abs());
        let mut advanced = false;
        while step > 1e-18 {
            let mut lam_new = lambda.clone();
            linalg::axpy(step, &vals, &mut lam_new);
            for l in lam_new.iter_mut() {
                *l = l.max(0.0);
            }
            let move_sq = linalg::dist(&lam_new, &lambda).powi(2);
            if move_sq == 0.0 {
                break;
            }
            let (vals_new, g_new) = eval_at(&lam_new, &mut x)?;
            evals += 1;
            if g_new >= g + 0.1 * move_sq / step - slack {
                lambda = lam_new;
                vals = vals_new;
                g = g_new;
                step *= 1.5;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
        if g > g_best + slack {
            g_best = g;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    // Phase two: coordinate polish. Holding the other multipliers fixed,
    // g restricted to lambda_i is concave with derivative vals_i, so the
    // optimal coordinate sits either at zero or at the sign change of
    // vals_i; bisecting on that sign recovers it to machine precision.
    if !converged {
        let m = quads.len();
        let mut metric_prev = f64::INFINITY;
        'polish: while evals < 3_600 {
            for i in 0..m {
                let mut lt = lambda.clone();
                lt[i] = 0.0;
                let (vt, _) = eval_at(&lt, &mut x)?;
                evals += 1;
                lambda[i] = if vt[i] <= 0.0 {
                    0.0
                } else {
                    let mut hi = (lambda[i] * 2.0).max(1e-9);
                    loop {
                        lt[i] = hi;
                        let (vt, _) = eval_at(&lt, &mut x)?;
                        evals += 1;
                        if vt[i] < 0.0 {
                            break;
                        }
                        hi *= 2.0;
                        if hi > 1e12 {
                            return Ok(None);
                        }
                    }
                    let mut lo = 0.0;
                    for _ in 0..55 {
                        let mid = 0.5 * (lo + hi);
                        lt[i] = mid;
                        let (vt, _) = eval_at(&lt, &mut x)?;
                        evals += 1;
                        if vt[i] > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
            }
            let refreshed = eval_at(&lambda, &mut x)?;
            evals += 1;
            vals = refreshed.0;
            g = refreshed.1;
            if meets(&vals, &lambda, g) {
                converged = true;
                break 'polish;
            }
            // Rescaling move. When the active gradients are nearly
            // positively dependent (thin surrogate interior), the dual is
            // almost linear along the current multiplier ray and both
            // coordinate moves and Newton crawl there; bisecting the scale
            // factor on the sign of its directional derivative
            // sum_i lambda_i v_i walks the ray directly.
            let norm1: f64 = lambda.iter().sum();
            let d1: f64 = lambda.iter().zip(&vals).map(|(&l, &v)| l * v).sum();
            if norm1 > 0.0 && d1 != 0.0 {
                let base = lambda.clone();
                let mut rho_lo = 1.0f64;
                let mut rho_hi = 1.0f64;
                let mut bracketed = true;
                if d1 > 0.0 {
                    loop {
                        rho_hi *= 2.0;
                        if rho_hi * norm1 > 1e12 {
                            return Ok(None);
                        }
                        let lt: Vec<f64> = base.iter().map(|&l| l * rho_hi).collect();
                        let (vt, _) = eval_at(&lt, &mut x)?;
                        evals += 1;
                        if base.iter().zip(&vt).map(|(&l, &v)| l * v).sum::<f64>() <= 0.0 {
                            break;
                        }
                    }
                } else {
                    loop {
                        rho_lo *= 0.5;
                        if rho_lo < 1e-12 {
                            bracketed = false;
                            break;
                        }
                        let lt: Vec<f64> = base.iter().map(|&l| l * rho_lo).collect();
                        let (vt, _) = eval_at(&lt, &mut x)?;
                        evals += 1;
                        if base.iter().zip(&vt).map(|(&l, &v)| l * v).sum::<f64>() >= 0.0 {
                            break;
                        }
                    }
                }
                if bracketed {
                    for _ in 0..55 {
                        let mid = 0.5 * (rho_lo + rho_hi);
                        let lt: Vec<f64> = base.iter().map(|&l| l * mid).collect();
                        let (vt, _) = eval_at(&lt, &mut x)?;
                        evals += 1;
                        if base.iter().zip(&vt).map(|(&l, &v)| l * v).sum::<f64>() > 0.0 {
                            rho_lo = mid;
                        } else {
                            rho_hi = mid;
                        }
                    }
                    let rho = 0.5 * (rho_lo + rho_hi);
                    for (l, &b) in lambda.iter_mut().zip(&base) {
                        *l = b * rho;
                    }
                    let refreshed = eval_at(&lambda, &mut x)?;
                    evals += 1;
                    vals = refreshed.0;
                    g = refreshed.1;
                    if meets(&vals, &lambda, g) {
                        converged = true;
                        break 'polish;
                    }
                }
            }
            // Newton refinement on the active set. The sweep settles which
            // multipliers are nonzero but contracts slowly when several
            // active constraints couple; with x interior the Jacobian of
            // the active values is -Gram(gradients)/(2 qbar), so a few
            // Newton steps finish the job.
            for _ in 0..6 {
                let active: Vec<usize> = (0..m).filter(|&i| lambda[i] > 0.0).collect();
                if active.is_empty() {
                    break;
                }
                let qbar =
                    obj.q + lambda.iter().zip(quads).map(|(&l, qd)| l * qd.q).sum::<f64>();
                let mut y = obj.b.clone();
                for (&l, qd) in lambda.iter().zip(quads) {
                    if l != 0.0 {
                        linalg::axpy(l, &qd.b, &mut y);
                    }
                }
                for v in y.iter_mut() {
                    *v /= -2.0 * qbar;
                }
                if linalg::dist(&y, &x) > 1e-10 * (1.0 + linalg::norm_sq(&y).sqrt()) {
                    break;
                }
                let grads: Vec<Vec<f64>> = active
                    .iter()
                    .map(|&a| {
                        let qd = &quads[a];
                        x.iter()
                            .zip(&qd.b)
                            .map(|(&xi, &bi)| 2.0 * qd.q * xi + bi)
                            .collect()
                    })
                    .collect();
                let gram: Vec<Vec<f64>> = grads
                    .iter()
                    .map(|gi| {
                        grads
                            .iter()
                            .map(|gj| gi.iter().zip(gj).map(|(a, b)| a * b).sum())
                            .collect()
                    })
                    .collect();
                let rhs: Vec<f64> =
                    active.iter().map(|&a| 2.0 * qbar * vals[a]).collect();
                let Some(delta) = solve_small_spd(gram, rhs) else {
                    break;
                };
                // Near-degenerate active sets make the full step overshoot,
                // so backtrack on the residual of the active values.
                let worst_before =
                    active.iter().map(|&a| vals[a].abs()).fold(0.0f64, f64::max);
                let lambda_snapshot = lambda.clone();
                let mut accepted = false;
                let mut t = 1.0;
                for _ in 0..6 {
                    for (idx, &a) in active.iter().enumerate() {
                        lambda[a] = (lambda_snapshot[a] + t * delta[idx]).max(0.0);
                    }
                    let refreshed = eval_at(&lambda, &mut x)?;
                    evals += 1;
                    vals = refreshed.0;
                    g = refreshed.1;
                    if meets(&vals, &lambda, g) {
                        converged = true;
                        break 'polish;
                    }
                    let worst_after =
                        active.iter().map(|&a| vals[a].abs()).fold(0.0f64, f64::max);
                    if worst_after < worst_before {
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    lambda = lambda_snapshot;
                    vals = eval_at(&lambda, &mut x)?.0;
                    evals += 1;
                    break;
                }
            }
            let violation = vals.iter().cloned().fold(0.0f64, f64::max);
            let complementarity = vals
                .iter()
                .zip(&lambda)
                .map(|(&v, &li)| (li * v).abs() / (1.0 + li))
                .fold(0.0f64, f64::max);
            let metric = violation.max(complementarity);
            if metric >= 0.9 * metric_prev {
                break 'polish;
            }
            metric_prev = metric;
        }
    }

    if !converged {
        return Ok(None);
    }
    let mut weights: Vec<(&dyn Surrogate, f64)> = vec![(obj_surr, 1.0)];
    weights.extend(surrs.iter().zip(&lambda).map(|(&s, &li)| (s, li)));
    let residual = stationarity_residual(&weights, &x, domain)?;
    let value = obj.eval(&x);
    warm.x.copy_from_slice(&x);
    warm.obj_lambda = lambda.clone();
    Ok(Some(SubproblemSolution {
        x,
        value,
        multipliers: lambda,
        inner_iterations: evals,
        residual,
    }))
}

/// Minimizes the worst constraint surrogate over the domain. Returns the
/// minimizer, the worst constraint value at it, and simplex weights on the
/// (nearly) active constraints.
pub fn solve_feasibility(
    constraints: &[&dyn Surrogate],
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<SubproblemSolution, SubproblemError> {
    assert!(!constraints.is_empty(), "feasibility subproblem needs constraints");
    let m = constraints.len();
    let n = warm.x.len();

    if m == 1 {
        if let Some(quad) = constraints[0].as_quadratic() {
            if quad.q > 0.0 {
                let x = quad_minimizer_projected(&quad, domain)?;
                let residual = stationarity_residual(&[(constraints[0], 1.0)], &x, domain)?;
                warm.x.copy_from_slice(&x);
                warm.feas_lambda[0] = 1.0;
                let value = quad.eval(&x);
                return Ok(SubproblemSolution {
                    x,
                    value,
                    multipliers: vec![1.0],
                    inner_iterations: 1,
                    residual,
                });
            }
        }
    } else if let Some(quads) = all_quadratics(constraints) {
        if quads.iter().all(|q| q.q > 0.0) {
            if let Some(sol) =
                dual_feasibility_quadratic(&quads, constraints, domain, warm, opts)?
            {
                return Ok(sol);
            }
        }
    }

    let mut lambda = warm.feas_lambda.clone();
    let mut c = warm.feas_penalty.clamp(opts.penalty_init, 1e6);
    let mut l = warm.feas_lipschitz;
    let mut x = warm.x.clone();
    let mut total_inner = 0usize;
    let mut prev_gap = f64::INFINITY;
    let gap_tol = (opts.tol * 10.0).max(1e-10);
    let mut best: Option<SubproblemSolution> = None;

    for _outer in 0..opts.max_outer {
        let budget = opts.max_inner.saturating_sub(total_inner);
        if budget == 0 {
            break;
        }
        let lam = lambda.clone();
        let pen = c;
        let mut vals = vec![0.0; m];
        let mut w = vec![0.0; m];
        let mut buf = vec![0.0; n];
        let cons = constraints;
        let psi = move |p: &[f64], out: &mut [f64]| -> f64 {
            for (i, con) in cons.iter().enumerate() {
                vals[i] = con.eval(p);
            }
            let alpha = waterfill_level(&vals, &lam, pen, &mut w);
            out.fill(0.0);
            let mut val = alpha;
            for i in 0..vals.len() {
                val += (w[i] * w[i] - lam[i] * lam[i]) / (2.0 * pen);
                if w[i] > 0.0 {
                    cons[i].grad_into(p, &mut buf);
                    linalg::axpy(w[i], &buf, out);
                }
            }
            val
        };
        let inner = fista(domain, &x, psi, opts.tol, budget, l)?;
        total_inner += inner.iterations.max(1);
        l = inner.lipschitz;
        x = inner.x;

        let vals: Vec<f64> = constraints.iter().map(|s| s.eval(&x)).collect();
        let mut w = vec![0.0; m];
        let alpha_level = waterfill_level(&vals, &lambda, c, &mut w);
        let alpha_true = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let gap = (alpha_true - alpha_level).abs();

        let candidate = SubproblemSolution {
            x: x.clone(),
            value: alpha_true,
            multipliers: w.clone(),
            inner_iterations: total_inner,
            residual: inner.residual,
        };
        let better = match &best {
            Some(b) => inner.residual + gap < b.residual,
            None => true,
        };
        if better {
            best = Some(candidate.clone());
        }

        if inner.residual <= opts.tol && gap <= gap_tol {
            warm.x.copy_from_slice(&x);
            warm.feas_lambda = w;
            warm.feas_penalty = c;
            warm.feas_lipschitz = l;
            return Ok(candidate);
        }
        lambda = w;
        if gap > 0.25 * prev_gap {
            c = (c * 4.0).min(opts.penalty_max);
        }
        prev_gap = gap;
    }

    let best = best.expect("at least one outer round runs");
    Err(SubproblemError::NoConvergence {
        used: total_inner,
        residual: best.residual,
        tol: opts.tol,
        best: Box::new(best),
    })
}

fn bisection_objective(
    obj: &QuadraticSurrogate,
    con: &QuadraticSurrogate,
    con_surr: &dyn Surrogate,
    obj_surr: &dyn Surrogate,
    domain: &Domain,
) -> Result<Option<SubproblemSolution>, crate::Error> {
    let n = obj.b.len();
    let mut evals = 0usize;
    let mut x_of = |lam: f64| -> Result<Vec<f64>, crate::Error> {
        evals += 1;
        let q = obj.q + lam * con.q;
        let mut x = vec![0.0; n];
        for j in 0..n {
            x[j] = -(obj.b[j] + lam * con.b[j]) / (2.0 * q);
        }
        domain.project(&mut x)?;
        Ok(x)
    };

    let x0 = x_of(0.0)?;
    if con.eval(&x0) <= 0.0 {
        let residual = stationarity_residual(&[(obj_surr, 1.0)], &x0, domain)?;
        let value = obj.eval(&x0);
        return Ok(Some(SubproblemSolution {
            x: x0,
            value,
            multipliers: vec![0.0],
            inner_iterations: evals,
            residual,
        }));
    }

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    loop {
        let x = x_of(hi)?;
        if con.eval(&x) <= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e14 {
            return Ok(None);
        }
    }
    let scale = 1.0 + con.eval(&x_of(lo)?).abs();
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let x = x_of(mid)?;
        let h = con.eval(&x);
        if h > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            if h > -1e-15 * scale {
                break;
            }
        }
    }
    let lam = hi;
    let x = x_of(lam)?;
    let residual = stationarity_residual(&[(obj_surr, 1.0), (con_surr, lam)], &x, domain)?;
    let value = obj.eval(&x);
    Ok(Some(SubproblemSolution {
        x,
        value,
        multipliers: vec![lam],
        inner_iterations: evals,
        residual,
    }))
}

/// Minimizes the objective surrogate subject to the constraint surrogates.
/// Call only when the constraint set is (approximately) nonempty, e.g.
/// after a feasibility solve returned a nonpositive level.
pub fn solve_objective(
    objective: &dyn Surrogate,
    constraints: &[&dyn Surrogate],
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<SubproblemSolution, SubproblemError> {
    let m = constraints.len();
    let n = warm.x.len();

    if m == 0 {
        if let Some(quad) = objective.as_quadratic() {
            if quad.q > 0.0 {
                let x = quad_minimizer_projected(&quad, domain)?;
                let residual = stationarity_residual(&[(objective, 1.0)], &x, domain)?;
                warm.x.copy_from_slice(&x);
                let value = quad.eval(&x);
                return Ok(SubproblemSolution {
                    x,
                    value,
                    multipliers: Vec::new(),
                    inner_iterations: 1,
                    residual,
                });
            }
        }
        let obj = objective;
        let inner = fista(
            domain,
            &warm.x,
            |p, out| {
                obj.grad_into(p, out);
                obj.eval(p)
            },
            opts.tol,
            opts.max_inner,
            warm.obj_lipschitz,
        )?;
        warm.obj_lipschitz = inner.lipschitz;
        let value = objective.eval(&inner.x);
        let sol = SubproblemSolution {
            x: inner.x,
            value,
            multipliers: Vec::new(),
            inner_iterations: inner.iterations,
            residual: inner.residual,
        };
        if sol.residual > opts.tol {
            return Err(SubproblemError::NoConvergence {
                used: sol.inner_iterations,
                residual: sol.residual,
                tol: opts.tol,
                best: Box::new(sol),
            });
        }
        warm.x.copy_from_slice(&sol.x);
        return Ok(sol);
    }

    if m == 1 {
        if let (Some(oq), Some(cq)) = (objective.as_quadratic(), constraints[0].as_quadratic()) {
            if oq.q > 0.0 && cq.q >= 0.0 {
                if let Some(sol) =
                    bisection_objective(&oq, &cq, constraints[0], objective, domain)?
                {
                    warm.x.copy_from_slice(&sol.x);
                    warm.obj_lambda[0] = sol.multipliers[0];
                    return Ok(sol);
                }
            }
        }
    } else if let Some(oq) = objective.as_quadratic() {
        if let Some(quads) = all_quadratics(constraints) {
            if oq.q > 0.0 && quads.iter().all(|q| q.q >= 0.0) {
                if let Some(sol) = dual_objective_quadratic(
                    &oq,
                    &quads,
                    objective,
                    constraints,
                    domain,
                    warm,
                    opts,
                )? {
                    return Ok(sol);
                }
            }
        }
    }

    let mut lambda = warm.obj_lambda.clone();
    let mut c = warm.obj_penalty.clamp(opts.penalty_init, 1e6);
    let mut l = warm.obj_lipschitz;
    let mut x = warm.x.clone();
    let mut total_inner = 0usize;
    let mut prev_violation = f64::INFINITY;
    let viol_tol = (opts.tol * 10.0).max(1e-10);
    let comp_tol = (opts.tol * 100.0).max(1e-6);
    let mut best: Option<(f64, SubproblemSolution)> = None;

    for _outer in 0..opts.max_outer {
        let budget = opts.max_inner.saturating_sub(total_inner);
        if budget == 0 {
            break;
        }
        let lam = lambda.clone();
        let pen = c;
        let obj = objective;
        let cons = constraints;
        let mut buf = vec![0.0; n];
        let phi = move |p: &[f64], out: &mut [f64]| -> f64 {
            let mut val = obj.eval(p);
            obj.grad_into(p, out);
            for (i, con) in cons.iter().enumerate() {
                let fi = con.eval(p);
                let a = lam[i] + pen * fi;
                if a > 0.0 {
                    val += (a * a - lam[i] * lam[i]) / (2.0 * pen);
                    con.grad_into(p, &mut buf);
                    linalg::axpy(a, &buf, out);
                } else {
                    val -= lam[i] * lam[i] / (2.0 * pen);
                }
            }
            val
        };
        let inner = fista(domain, &x, phi, opts.tol, budget, l)?;
        total_inner += inner.iterations.max(1);
        l = inner.lipschitz;
        x = inner.x;

        let vals: Vec<f64> = constraints.iter().map(|s| s.eval(&x)).collect();
        let lam_plus: Vec<f64> =
            vals.iter().zip(&lambda).map(|(&v, &lm)| (lm + c * v).max(0.0)).collect();
        let violation = vals.iter().cloned().fold(0.0f64, f64::max);
        let complementarity = vals
            .iter()
            .zip(&lam_plus)
            .map(|(&v, &lm)| (lm * v).abs() / (1.0 + lm))
            .fold(0.0f64, f64::max);

        let score = inner.residual + violation.max(0.0) + complementarity;
        let candidate = SubproblemSolution {
            x: x.clone(),
            value: objective.eval(&x),
            multipliers: lam_plus.clone(),
            inner_iterations: total_inner,
            residual: inner.residual,
        };
        let better = match &best {
            Some((s, _)) => score < *s,
            None => true,
        };
        if better {
            best = Some((score, candidate.clone()));
        }

        if inner.residual <= opts.tol && violation <= viol_tol && complementarity <= comp_tol {
            warm.x.copy_from_slice(&x);
            warm.obj_lambda = lam_plus;
            warm.obj_penalty = c;
            warm.obj_lipschitz = l;
            return Ok(candidate);
        }
        lambda = lam_plus;
        if violation.max(0.0) > 0.25 * prev_violation {
            c = (c * 4.0).min(opts.penalty_max);
        }
        prev_violation = violation.max(0.0);
    }

    let (_, best) = best.expect("at least one outer round runs");
    Err(SubproblemError::NoConvergence {
        used: total_inner,
        residual: best.residual,
        tol: opts.tol,
        best: Box::new(best),
    })
}

/// Full step logic: probe feasibility, then solve whichever subproblem the
/// level value selects.
pub fn solve_step(
    objective: &dyn Surrogate,
    constraints: &[&dyn Surrogate],
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<StepResult, SubproblemError> {
    if constraints.is_empty() {
        let solution = solve_objective(objective, constraints, domain, warm, opts)?;
        return Ok(StepResult { kind: UpdateKind::Objective, solution, feasibility_alpha: None });
    }
    let feas = solve_feasibility(constraints, domain, warm, opts)?;
    let alpha = feas.value;
    if alpha <= 0.0 {
        let mut solution = solve_objective(objective, constraints, domain, warm, opts)?;
        solution.inner_iterations += feas.inner_iterations;
        Ok(StepResult { kind: UpdateKind::Objective, solution, feasibility_alpha: Some(alpha) })
    } else {
        warm.x.copy_from_slice(&feas.x);
        Ok(StepResult {
            kind: UpdateKind::Feasibility,
            solution: feas,
            feasibility_alpha: Some(alpha),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::StateSampler;
    use proptest::prelude::*;

    /// Hides the quadratic structure of a surrogate so tests can force the
    /// general augmented Lagrangian path.
    struct Opaque<'a>(&'a dyn Surrogate);

    impl Surrogate for Opaque<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn eval(&self, x: &[f64]) -> f64 {
            self.0.eval(x)
        }
        fn grad_into(&self, x: &[f64], out: &mut [f64]) {
            self.0.grad_into(x, out)
        }
        fn strong_convexity(&self) -> f64 {
            self.0.strong_convexity()
        }
    }

    fn quad(q: f64, b: Vec<f64>, c: f64) -> QuadraticSurrogate {
        QuadraticSurrogate { q, b, c }
    }

    #[test]
    fn waterfill_satisfies_level_equation() {
        let mut sampler = StateSampler::new(7);
        for _ in 0..200 {
            let m = 1 + (sampler.standard_normal().abs() * 3.0) as usize % 6;
            let vals: Vec<f64> = (0..m).map(|_| 2.0 * sampler.standard_normal()).collect();
            let lambda: Vec<f64> =
                (0..m).map(|_| sampler.standard_normal().abs() * 0.5).collect();
            let c = 10f64.powf(sampler.standard_normal().abs().min(4.0));
            let mut w = vec![0.0; m];
            let alpha = waterfill_level(&vals, &lambda, c, &mut w);
            let total: f64 =
                vals.iter().zip(&lambda).map(|(&v, &lm)| (lm + c * (v - alpha)).max(0.0)).sum();
            assert!(
                (total - 1.0).abs() < 1e-9 * (1.0 + c),
                "water-fill equation violated: sum {total}, c {c}"
            );
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9 * (1.0 + c));
        }
    }

    #[test]
    fn feasibility_single_ball_constraint_shifted_up() {
        // min over the box of |x|^2 + 1 is 1 at the origin: strictly
        // infeasible, so the step must be a feasibility update at 0.
        let domain = Domain::symmetric_box(2, 2.0);
        let f0 = quad(1.0, vec![0.0, 0.0], 0.0);
        let f1 = quad(1.0, vec![0.0, 0.0], 1.0);
        let mut warm = WarmStart::new(vec![1.5, -0.5], 1);
        let opts = SolveOptions::default();
        let cons: Vec<&dyn Surrogate> = vec![&f1];
        let step = solve_step(&f0, &cons, &domain, &mut warm, &opts).unwrap();
        assert_eq!(step.kind, UpdateKind::Feasibility);
        let alpha = step.feasibility_alpha.unwrap();
        assert!((alpha - 1.0).abs() < 1e-9, "alpha should be 1, got {alpha}");
        assert!(linalg::norm(&step.solution.x) < 1e-9);
    }

    #[test]
    fn feasibility_two_shifted_balls_meets_in_the_middle() {
        // f1 = |x - e1|^2, f2 = |x + e1|^2: the worst value is minimized at
        // the origin with level 1 and equal weights.
        let domain = Domain::symmetric_box(2, 2.0);
        let f1 = quad(1.0, vec![-2.0, 0.0], 1.0);
        let f2 = quad(1.0, vec![2.0, 0.0], 1.0);
        let cons: Vec<&dyn Surrogate> = vec![&f1, &f2];
        let mut warm = WarmStart::new(vec![0.9, 0.4], 2);
        let opts = SolveOptions::default();
        let sol = solve_feasibility(&cons, &domain, &mut warm, &opts).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-6, "level should be 1, got {}", sol.value);
        assert!(linalg::norm(&sol.x) < 1e-4, "minimax point should be 0, got {:?}", sol.x);
        assert!((sol.multipliers[0] - 0.5).abs() < 1e-4);
        assert!((sol.multipliers[1] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn objective_with_affine_constraint_matches_hand_kkt() {
        // min |x|^2 s.t. 1 - x1 <= 0 over the box [-2,2]^2: solution (1, 0)
        // with multiplier 2. The affine constraint has no curvature, so this
        // exercises the augmented Lagrangian path.
        let domain = Domain::symmetric_box(2, 2.0);
        let f0 = quad(1.0, vec![0.0, 0.0], 0.0);
        let f1 = quad(0.0, vec![-1.0, 0.0], 1.0);
        let cons: Vec<&dyn Surrogate> = vec![&f1];
        let mut warm = WarmStart::new(vec![0.0, 0.0], 1);
        let opts = SolveOptions::default();
        let step = solve_step(&f0, &cons, &domain, &mut warm, &opts).unwrap();
        assert_eq!(step.kind, UpdateKind::Objective);
        assert!(step.feasibility_alpha.unwrap() <= 0.0);
        assert!(linalg::dist(&step.solution.x, &[1.0, 0.0]) < 1e-6);
        assert!((step.solution.multipliers[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn objective_ball_constraint_bisection_matches_hand_kkt() {
        // min |x - (2,0)|^2 s.t. |x|^2 - 1 <= 0: solution (1,0), multiplier 1.
        let domain = Domain::symmetric_box(2, 3.0);
        let f0 = quad(1.0, vec![-4.0, 0.0], 4.0);
        let f1 = quad(1.0, vec![0.0, 0.0], -1.0);
        let cons: Vec<&dyn Surrogate> = vec![&f1];
        let mut warm = WarmStart::new(vec![0.0, 0.0], 1);
        let opts = SolveOptions::default();
        let step = solve_step(&f0, &cons, &domain, &mut warm, &opts).unwrap();
        assert_eq!(step.kind, UpdateKind::Objective);
        assert!((step.feasibility_alpha.unwrap() + 1.0).abs() < 1e-9);
        assert!(linalg::dist(&step.solution.x, &[1.0, 0.0]) < 1e-8);
        assert!((step.solution.multipliers[0] - 1.0).abs() < 1e-6);
        assert!((step.solution.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn bisection_and_augmented_lagrangian_agree() {
        let domain = Domain::origin_ball(3, 2.5);
        let f0 = quad(0.8, vec![1.0, -2.0, 0.5], 0.3);
        let f1 = quad(1.2, vec![0.4, 1.0, -3.0], -0.8);
        let opts = SolveOptions::default();

        let cons_fast: Vec<&dyn Surrogate> = vec![&f1];
        let mut warm = WarmStart::new(vec![0.0; 3], 1);
        let fast = solve_objective(&f0, &cons_fast, &domain, &mut warm, &opts).unwrap();

        let o0 = Opaque(&f0);
        let o1 = Opaque(&f1);
        let cons_slow: Vec<&dyn Surrogate> = vec![&o1];
        let mut warm = WarmStart::new(vec![0.0; 3], 1);
        let slow = solve_objective(&o0, &cons_slow, &domain, &mut warm, &opts).unwrap();

        assert!(
            linalg::dist(&fast.x, &slow.x) < 1e-5,
            "paths disagree: {:?} vs {:?}",
            fast.x,
            slow.x
        );
        assert!((fast.value - slow.value).abs() < 1e-7);
    }

    #[test]
    fn unconstrained_quadratic_solved_by_projection() {
        let domain = Domain::symmetric_box(2, 1.0);
        let f0 = quad(1.0, vec![-6.0, 1.0], 0.0);
        let mut warm = WarmStart::new(vec![0.0, 0.0], 0);
        let opts = SolveOptions::default();
        let step = solve_step(&f0, &[], &domain, &mut warm, &opts).unwrap();
        assert_eq!(step.kind, UpdateKind::Objective);
        assert!(step.feasibility_alpha.is_none());
        // Unconstrained minimizer (3, -0.5) clamps to (1, -0.5).
        assert!(linalg::dist(&step.solution.x, &[1.0, -0.5]) < 1e-12);

        let o0 = Opaque(&f0);
        let mut warm = WarmStart::new(vec![0.0, 0.0], 0);
        let iterative = solve_step(&o0, &[], &domain, &mut warm, &opts).unwrap();
        assert!(linalg::dist(&iterative.solution.x, &[1.0, -0.5]) < 1e-6);
    }

    #[test]
    fn constrained_minimum_matches_dense_grid() {
        // Independent check on a 200x200 grid over the box.
        let domain = Domain::symmetric_box(2, 2.0);
        let f0 = quad(0.7, vec![1.3, -0.9], 0.2);
        let f1 = quad(1.1, vec![-1.0, -2.2], -0.6);
        let cons: Vec<&dyn Surrogate> = vec![&f1];
        let mut warm = WarmStart::new(vec![0.0, 0.0], 1);
        let opts = SolveOptions::default();
        let step = solve_step(&f0, &cons, &domain, &mut warm, &opts).unwrap();
        assert_eq!(step.kind, UpdateKind::Objective);

        let nodes = 200;
        let mut grid_best = f64::INFINITY;
        for ix in 0..=nodes {
            for iy in 0..=nodes {
                let x = [
                    -2.0 + 4.0 * ix as f64 / nodes as f64,
                    -2.0 + 4.0 * iy as f64 / nodes as f64,
                ];
                if f1.eval(&x) <= 0.0 {
                    grid_best = grid_best.min(f0.eval(&x));
                }
            }
        }
        assert!(
            step.solution.value <= grid_best + 1e-6,
            "solver value {} worse than grid value {grid_best}",
            step.solution.value
        );
        assert!(f1.eval(&step.solution.x) <= 1e-8, "solver point infeasible");
    }

    #[test]
    fn multi_constraint_dual_agrees_with_augmented_lagrangian() {
        let mut sampler = StateSampler::new(17);
        for trial in 0..20 {
            let n = 3 + (trial % 3);
            let m = 2 + (trial % 3);
            let domain = if trial % 2 == 0 {
                Domain::symmetric_box(n, 2.0)
            } else {
                Domain::origin_ball(n, 2.0)
            };
            let mk = |sampler: &mut StateSampler, shift: f64| QuadraticSurrogate {
                q: 0.4 + sampler.standard_normal().abs(),
                b: (0..n).map(|_| sampler.standard_normal()).collect(),
                c: sampler.standard_normal() + shift,
            };
            let f0 = mk(&mut sampler, 0.0);
            let cons_owned: Vec<QuadraticSurrogate> =
                (0..m).map(|_| mk(&mut sampler, -1.5)).collect();
            let opts = SolveOptions::default();

            let fast_refs: Vec<&dyn Surrogate> =
                cons_owned.iter().map(|c| c as &dyn Surrogate).collect();
            let mut warm = WarmStart::new(vec![0.0; n], m);
            let fast = solve_step(&f0, &fast_refs, &domain, &mut warm, &opts).unwrap();

            let o0 = Opaque(&f0);
            let opaque_owned: Vec<Opaque> = cons_owned.iter().map(|c| Opaque(c)).collect();
            let slow_refs: Vec<&dyn Surrogate> =
                opaque_owned.iter().map(|c| c as &dyn Surrogate).collect();
            let mut warm = WarmStart::new(vec![0.0; n], m);
            let slow = solve_step(&o0, &slow_refs, &domain, &mut warm, &opts).unwrap();

            assert_eq!(fast.kind, slow.kind, "trial {trial} disagrees on update kind");
            assert!(
                linalg::dist(&fast.solution.x, &slow.solution.x) < 1e-4,
                "trial {trial}: {:?} vs {:?}",
                fast.solution.x,
                slow.solution.x
            );
            assert!(
                (fast.solution.value - slow.solution.value).abs() < 1e-5,
                "trial {trial}: values {} vs {}",
                fast.solution.value,
                slow.solution.value
            );
        }
    }

    #[test]
    fn dual_path_handles_steep_constraint_gradients() {
        // Shaped like a smoothed-indicator subproblem: a gentle objective,
        // several constraints whose linear coefficients are a few orders of
        // magnitude larger, and a huge ball domain. The penalty method
        // becomes hopelessly stiff here; the dual search must still produce
        // a KKT point.
        let mut sampler = StateSampler::new(23);
        for trial in 0..10 {
            let n = 12;
            let domain = Domain::origin_ball(n, 100.0);
            let f0 = QuadraticSurrogate {
                q: 1.0,
                b: (0..n).map(|_| 0.3 * sampler.standard_normal()).collect(),
                c: 0.0,
            };
            let cons_owned: Vec<QuadraticSurrogate> = (0..3)
                .map(|_| QuadraticSurrogate {
                    q: 3.0,
                    b: (0..n).map(|_| 80.0 * sampler.standard_normal()).collect(),
                    c: -0.05,
                })
                .collect();
            let cons: Vec<&dyn Surrogate> =
                cons_owned.iter().map(|c| c as &dyn Surrogate).collect();
            let mut warm = WarmStart::new(vec![0.0; n], 3);
            let opts = SolveOptions::default();
            let step = solve_step(&f0, &cons, &domain, &mut warm, &opts)
                .unwrap_or_else(|e| panic!("trial {trial} failed: {e}"));
            match step.kind {
                UpdateKind::Objective => {
                    let cert = kkt_certificate(
                        &f0,
                        &cons,
                        &step.solution.x,
                        &step.solution.multipliers,
                        &domain,
                    )
                    .unwrap();
                    assert!(cert.feasibility < 1e-6, "violation {}", cert.feasibility);
                    assert!(cert.complementarity < 1e-4, "comp {}", cert.complementarity);
                }
                UpdateKind::Feasibility => {
                    let w_sum: f64 = step.solution.multipliers.iter().sum();
                    assert!((w_sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn feasibility_dual_matches_three_ball_hand_solution() {
        // Three unit-curvature quadratics centered on an equilateral
        // triangle around the origin: the minimax point is the centroid
        // (the origin) and the level is the squared circumradius.
        let domain = Domain::symmetric_box(2, 5.0);
        let r = 1.5f64;
        let centers =
            [(r, 0.0), (-0.5 * r, 0.75f64.sqrt() * r), (-0.5 * r, -(0.75f64.sqrt()) * r)];
        let cons_owned: Vec<QuadraticSurrogate> = centers
            .iter()
            .map(|&(cx, cy)| QuadraticSurrogate {
                q: 1.0,
                b: vec![-2.0 * cx, -2.0 * cy],
                c: cx * cx + cy * cy,
            })
            .collect();
        let cons: Vec<&dyn Surrogate> = cons_owned.iter().map(|c| c as &dyn Surrogate).collect();
        let mut warm = WarmStart::new(vec![1.0, -1.0], 3);
        let opts = SolveOptions::default();
        let sol = solve_feasibility(&cons, &domain, &mut warm, &opts).unwrap();
        assert!(linalg::norm(&sol.x) < 1e-6, "minimax point should be the centroid");
        assert!((sol.value - r * r).abs() < 1e-6, "level should be r^2, got {}", sol.value);
        for w in &sol.multipliers {
            assert!((w - 1.0 / 3.0).abs() < 1e-4, "weights should be uniform, got {w}");
        }
    }


    #[test]
    fn warm_start_reuses_multipliers() {
        let domain = Domain::symmetric_box(2, 3.0);
        let f0 = quad(1.0, vec![-4.0, 0.0], 4.0);
        let f1 = Opaque(&f0);
        let con = quad(1.0, vec![0.0, 0.0], -1.0);
        let ocon = Opaque(&con);
        let cons: Vec<&dyn Surrogate> = vec![&ocon];
        let opts = SolveOptions::default();
        let mut warm = WarmStart::new(vec![0.0, 0.0], 1);
        let cold = solve_objective(&f1, &cons, &domain, &mut warm, &opts).unwrap();
        let rewarm = solve_objective(&f1, &cons, &domain, &mut warm, &opts).unwrap();
        assert!(
            rewarm.inner_iterations <= cold.inner_iterations,
            "warm solve should not be slower: {} vs {}",
            rewarm.inner_iterations,
            cold.inner_iterations
        );
        assert!(linalg::dist(&cold.x, &rewarm.x) < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn prop_solutions_carry_kkt_certificates(seed in 0u64..500) {
            let mut sampler = StateSampler::new(seed);
            let n = 2 + (seed % 3) as usize;
            let m = (seed % 4) as usize;
            let domain = if seed % 2 == 0 {
                Domain::symmetric_box(n, 2.0)
            } else {
                Domain::origin_ball(n, 2.0)
            };
            let mk = |sampler: &mut StateSampler, shift: f64| {
                let b: Vec<f64> = (0..n).map(|_| sampler.standard_normal()).collect();
                QuadraticSurrogate {
                    q: 0.3 + sampler.standard_normal().abs(),
                    b,
                    c: sampler.standard_normal() + shift,
                }
            };
            let f0 = mk(&mut sampler, 0.0);
            let cons_owned: Vec<QuadraticSurrogate> =
                (0..m).map(|_| mk(&mut sampler, -1.0)).collect();
            let cons: Vec<&dyn Surrogate> = cons_owned.iter().map(|c| c as &dyn Surrogate).collect();
            let mut warm = WarmStart::new(vec![0.0; n], m);
            let opts = SolveOptions::default();
            let step = solve_step(&f0, &cons, &domain, &mut warm, &opts).unwrap();
            match step.kind {
                UpdateKind::Objective => {
                    let cert = kkt_certificate(
                        &f0, &cons, &step.solution.x, &step.solution.multipliers, &domain,
                    ).unwrap();
                    prop_assert!(cert.stationarity < 1e-5, "stationarity {}", cert.stationarity);
                    prop_assert!(cert.feasibility < 1e-6, "feasibility {}", cert.feasibility);
                    prop_assert!(cert.complementarity < 1e-4, "complementarity {}", cert.complementarity);
                }
                UpdateKind::Feasibility => {
                    let sol = &step.solution;
                    let w_sum: f64 = sol.multipliers.iter().sum();
                    prop_assert!((w_sum - 1.0).abs() < 1e-6, "weights off simplex: {w_sum}");
                    prop_assert!(sol.multipliers.iter().all(|&w| w >= -1e-12));
                    prop_assert!(sol.value > 0.0, "feasibility kind but level nonpositive");
                    let pairs: Vec<(&dyn Surrogate, f64)> = cons
                        .iter()
                        .zip(&sol.multipliers)
                        .map(|(&c, &w)| (c, w))
                        .collect();
                    let res = stationarity_residual(&pairs, &sol.x, &domain).unwrap();
                    prop_assert!(res < 1e-5, "minimax stationarity {res}");
                }
            }
        }
    }
}
