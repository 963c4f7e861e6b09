//! Block-parallel variant of the iteration for decoupled problems.
//!
//! When the variable splits into blocks, the domain is a product across
//! those blocks, and every constraint depends on exactly one block, the
//! per-iteration subproblem separates: each block solves its own
//! feasibility/objective pair with the other blocks frozen at the current
//! iterate. Blocks decide independently between the objective and the
//! feasibility update; the reported level value is the worst one across
//! blocks.
//!
//! Separation requires the surrogates to be isotropic quadratics, which
//! holds for the recursive construction and for structured surrogates
//! whose convex part is empty. The block solves are pure functions of the
//! (shared) surrogate state, so running them on one thread or many produces
//! bitwise identical iterates; worker count is a throughput knob only.

use std::ops::Range;

use crate::driver::{run_engine, DriverError, RunConfig, RunTrace, StepEngine};
use crate::problem::{Domain, SampleProblem};
use crate::subproblem::{
    solve_step, SolveOptions, StepResult, SubproblemError, SubproblemSolution, UpdateKind,
    WarmStart,
};
use crate::surrogate::{QuadraticSurrogate, Surrogate, SurrogateBank};
use crate::Error;

/// Contiguous partition of the decision vector into blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self, Error> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParam("block sizes must be nonempty and positive".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(BlockStructure { offsets })
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn slice<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        &x[self.range(k)]
    }
}

/// A problem whose constraints each touch a single block and whose domain
/// factors across the same blocks.
pub trait DecoupledProblem: SampleProblem {
    fn blocks(&self) -> &BlockStructure;

    /// Block that constraint `i` (0-based among constraints) depends on.
    fn constraint_block(&self, i: usize) -> usize;

    /// Domain factor for block `k`.
    fn block_domain(&self, k: usize) -> Domain;
}

/// Restriction of a full-space isotropic quadratic to one block, with the
/// remaining coordinates frozen at `frozen`. Constant terms are kept exact
/// so constraint levels stay meaningful.
fn restrict(quad: &QuadraticSurrogate, range: Range<usize>, frozen: &[f64]) -> QuadraticSurrogate {
    let mut c = quad.c;
    for j in 0..frozen.len() {
        if !range.contains(&j) {
            c += quad.q * frozen[j] * frozen[j] + quad.b[j] * frozen[j];
        }
    }
    QuadraticSurrogate { q: quad.q, b: quad.b[range].to_vec(), c }
}

struct ParallelEngine {
    blocks: BlockStructure,
    domains: Vec<Domain>,
    /// Constraint indices per block.
    assignment: Vec<Vec<usize>>,
    warms: Vec<WarmStart>,
    workers: usize,
}

impl ParallelEngine {
    fn new<P: DecoupledProblem>(problem: &P, x0: &[f64], workers: usize) -> Result<Self, Error> {
        let blocks = problem.blocks().clone();
        if blocks.dim() != problem.dim() {
            return Err(Error::DimMismatch(format!(
                "blocks cover {} coordinates but the problem has {}",
                blocks.dim(),
                problem.dim()
            )));
        }
        let nb = blocks.num_blocks();
        let mut assignment = vec![Vec::new(); nb];
        for i in 0..problem.num_constraints() {
            let k = problem.constraint_block(i);
            if k >= nb {
                return Err(Error::InvalidParam(format!(
                    "constraint {i} assigned to block {k}, but there are only {nb} blocks"
                )));
            }
            assignment[k].push(i);
        }
        let mut domains = Vec::with_capacity(nb);
        let mut warms = Vec::with_capacity(nb);
        for k in 0..nb {
            let d = problem.block_domain(k);
            if d.dim() != blocks.range(k).len() {
                return Err(Error::DimMismatch(format!(
                    "block {k} domain has dimension {}, expected {}",
                    d.dim(),
                    blocks.range(k).len()
                )));
            }
            domains.push(d);
            warms.push(WarmStart::new(blocks.slice(x0, k).to_vec(), assignment[k].len()));
        }
        Ok(ParallelEngine { blocks, domains, assignment, warms, workers: workers.max(1) })
    }
}

struct BlockTask {
    k: usize,
    objective: QuadraticSurrogate,
    constraints: Vec<QuadraticSurrogate>,
}

fn solve_block(
    task: &BlockTask,
    domain: &Domain,
    warm: &mut WarmStart,
    opts: &SolveOptions,
) -> Result<StepResult, SubproblemError> {
    let refs: Vec<&dyn Surrogate> = task.constraints.iter().map(|c| c as &dyn Surrogate).collect();
    solve_step(&task.objective, &refs, domain, warm, opts)
}

impl<P: DecoupledProblem> StepEngine<P> for ParallelEngine {
    fn step(
        &mut self,
        bank: &SurrogateBank<'_, P>,
        x_t: &[f64],
        _domain: &Domain,
        opts: &SolveOptions,
    ) -> Result<StepResult, SubproblemError> {
        let quadratic_or_err = |s: &dyn Surrogate| {
            s.as_quadratic().ok_or_else(|| {
                SubproblemError::Numeric(Error::InvalidParam(
                    "parallel mode needs quadratic surrogates \
                     (recursive kind, or structured with an empty convex part)"
                        .into(),
                ))
            })
        };
        let obj = quadratic_or_err(bank.objective())?;
        let cons = bank.constraints();
        let mut con_quads = Vec::with_capacity(cons.len());
        for c in &cons {
            con_quads.push(quadratic_or_err(*c)?);
        }

        let nb = self.blocks.num_blocks();
        let mut tasks = Vec::with_capacity(nb);
        for k in 0..nb {
            let range = self.blocks.range(k);
            tasks.push(BlockTask {
                k,
                objective: restrict(&obj, range.clone(), x_t),
                constraints: self.assignment[k]
                    .iter()
                    .map(|&i| restrict(&con_quads[i], range.clone(), x_t))
                    .collect(),
            });
        }

        let workers = self.workers.min(nb);
        let mut results: Vec<(usize, Result<StepResult, SubproblemError>)> =
            if workers <= 1 {
                tasks
                    .iter()
                    .zip(self.warms.iter_mut())
                    .map(|(task, warm)| {
                        (task.k, solve_block(task, &self.domains[task.k], warm, opts))
                    })
                    .collect()
            } else {
                // Round-robin bins keep per-block state with its task while
                // letting each worker own a disjoint set of blocks.
                let domains = &self.domains;
                let mut bins: Vec<Vec<(&BlockTask, &mut WarmStart)>> =
                    (0..workers).map(|_| Vec::new()).collect();
                for (task, warm) in tasks.iter().zip(self.warms.iter_mut()) {
                    bins[task.k % workers].push((task, warm));
                }
                std::thread::scope(|scope| {
                    let handles: Vec<_> = bins
                        .into_iter()
                        .map(|bin| {
                            scope.spawn(move || {
                                bin.into_iter()
                                    .map(|(task, warm)| {
                                        (task.k, solve_block(task, &domains[task.k], warm, opts))
                                    })
                                    .collect::<Vec<_>>()
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .flat_map(|h| h.join().expect("block worker panicked"))
                        .collect()
                })
            };
        results.sort_by_key(|(k, _)| *k);

        let mut x = x_t.to_vec();
        let mut multipliers = vec![0.0; cons.len()];
        let mut alpha: Option<f64> = None;
        let mut kind = UpdateKind::Objective;
        let mut inner = 0usize;
        let mut residual = 0.0f64;
        for (k, res) in results {
            let step = res?;
            let range = self.blocks.range(k);
            x[range].copy_from_slice(&step.solution.x);
            for (slot, &i) in self.assignment[k].iter().enumerate() {
                multipliers[i] = step.solution.multipliers[slot];
            }
            if let Some(a) = step.feasibility_alpha {
                alpha = Some(alpha.map_or(a, |cur: f64| cur.max(a)));
            }
            if step.kind == UpdateKind::Feasibility {
                kind = UpdateKind::Feasibility;
            }
            inner += step.solution.inner_iterations;
            residual = residual.max(step.solution.residual);
        }
        let value = obj.eval(&x);
        Ok(StepResult {
            kind,
            solution: SubproblemSolution {
                x,
                value,
                multipliers,
                inner_iterations: inner,
                residual,
            },
            feasibility_alpha: alpha,
        })
    }
}

/// Block-parallel run. `workers = 1` executes the same block solves
/// sequentially; any worker count yields bitwise identical traces.
pub fn parallel_run<P: DecoupledProblem>(
    problem: &P,
    x0: &[f64],
    config: &RunConfig,
    workers: usize,
) -> Result<RunTrace, DriverError> {
    let mut engine = ParallelEngine::new(problem, x0, workers)?;
    run_engine(problem, x0, config, &mut engine)
}
