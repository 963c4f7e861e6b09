//! Small synthetic problems with known solutions, used for calibration and
//! end-to-end checks.

use crate::linalg;
use crate::parallel::{BlockStructure, DecoupledProblem};
use crate::problem::{Domain, SampleProblem, StateSampler};
use crate::Error;

/// `min |x - target|^2 s.t. 1 - |x|^2 <= 0` over a box, with additive noise
/// on both functions. With `target = (0.25, 0)` the solution is `(1, 0)`
/// with multiplier 0.75.
pub struct CircleQcqp {
    domain: Domain,
    pub target: Vec<f64>,
    pub noise: f64,
}

impl CircleQcqp {
    pub fn new(noise: f64) -> Self {
        CircleQcqp { domain: Domain::symmetric_box(2, 2.0), target: vec![0.25, 0.0], noise }
    }
}

impl SampleProblem for CircleQcqp {
    type State = (f64, f64);

    fn dim(&self) -> usize {
        2
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn draw(&self, sampler: &mut StateSampler) -> (f64, f64) {
        (self.noise * sampler.standard_normal(), self.noise * sampler.standard_normal())
    }

    fn value(&self, i: usize, x: &[f64], s: &(f64, f64)) -> f64 {
        match i {
            0 => linalg::dist(x, &self.target).powi(2) + s.0 * x[0],
            _ => 1.0 - linalg::norm_sq(x) + s.1 * x[1],
        }
    }

    fn gradient(&self, i: usize, x: &[f64], s: &(f64, f64)) -> Vec<f64> {
        match i {
            0 => vec![2.0 * (x[0] - self.target[0]) + s.0, 2.0 * (x[1] - self.target[1])],
            _ => vec![-2.0 * x[0], -2.0 * x[1] + s.1],
        }
    }
}

/// Five-dimensional noisy quadratic with one ellipsoidal expectation
/// constraint; curvature varies per coordinate so the iterate path is not
/// symmetric.
pub struct NoisyEllipsoid {
    domain: Domain,
    pub weights: Vec<f64>,
    pub target: Vec<f64>,
    pub radius_sq: f64,
    pub noise: f64,
}

impl NoisyEllipsoid {
    pub fn new(noise: f64) -> Self {
        NoisyEllipsoid {
            domain: Domain::symmetric_box(5, 3.0),
            weights: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            target: vec![1.2, -0.8, 0.9, -1.1, 0.6],
            radius_sq: 1.0,
            noise,
        }
    }
}

impl SampleProblem for NoisyEllipsoid {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        5
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn draw(&self, sampler: &mut StateSampler) -> Vec<f64> {
        (0..6).map(|_| self.noise * sampler.standard_normal()).collect()
    }

    fn value(&self, i: usize, x: &[f64], s: &Vec<f64>) -> f64 {
        match i {
            0 => {
                let mut v = 0.0;
                for j in 0..5 {
                    v += (x[j] - self.target[j]).powi(2) + s[j] * x[j];
                }
                v
            }
            _ => {
                let mut v = -self.radius_sq + s[5];
                for j in 0..5 {
                    v += self.weights[j] * x[j] * x[j];
                }
                v
            }
        }
    }

    fn gradient(&self, i: usize, x: &[f64], s: &Vec<f64>) -> Vec<f64> {
        match i {
            0 => (0..5).map(|j| 2.0 * (x[j] - self.target[j]) + s[j]).collect(),
            _ => (0..5).map(|j| 2.0 * self.weights[j] * x[j]).collect(),
        }
    }
}

/// A chain of independent two-dimensional blocks: block `k` is pulled toward
/// a target outside its own ball constraint `|x_k|^2 <= r_k^2`, so the
/// noise-free solution projects each target onto its ball. One draw per
/// iteration perturbs the objective and every constraint, which makes this
/// the reference workload for the block-parallel solver.
pub struct BlockBalls {
    domain: Domain,
    blocks: BlockStructure,
    pub targets: Vec<f64>,
    pub radii: Vec<f64>,
    pub noise: f64,
}

impl BlockBalls {
    pub fn new(blocks: usize, noise: f64) -> Result<Self, Error> {
        let structure = BlockStructure::from_sizes(&vec![2; blocks])?;
        let mut targets = Vec::with_capacity(2 * blocks);
        let mut radii = Vec::with_capacity(blocks);
        for k in 0..blocks {
            let angle = 0.4 + 2.0 * std::f64::consts::PI * k as f64 / blocks as f64;
            targets.push(2.5 * angle.cos());
            targets.push(2.5 * angle.sin());
            radii.push([1.0, 0.8, 1.2, 0.6][k % 4]);
        }
        let domain = Domain::Product((0..blocks).map(|_| Domain::symmetric_box(2, 3.0)).collect());
        Ok(BlockBalls { domain, blocks: structure, targets, radii, noise })
    }

    /// Noise-free optimum: each block's target projected onto its ball.
    pub fn solution(&self) -> Vec<f64> {
        let mut x = self.targets.clone();
        for k in 0..self.radii.len() {
            let range = self.blocks.range(k);
            let len = linalg::norm_sq(&x[range.clone()]).sqrt();
            if len > self.radii[k] {
                let scale = self.radii[k] / len;
                for j in range {
                    x[j] *= scale;
                }
            }
        }
        x
    }
}

impl SampleProblem for BlockBalls {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.blocks.dim()
    }

    fn num_constraints(&self) -> usize {
        self.radii.len()
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn draw(&self, sampler: &mut StateSampler) -> Vec<f64> {
        (0..=self.radii.len()).map(|_| self.noise * sampler.standard_normal()).collect()
    }

    fn value(&self, i: usize, x: &[f64], s: &Vec<f64>) -> f64 {
        if i == 0 {
            let mut v = s[0];
            for j in 0..x.len() {
                v += (x[j] - self.targets[j]).powi(2);
            }
            v
        } else {
            let k = i - 1;
            linalg::norm_sq(self.blocks.slice(x, k)) - self.radii[k].powi(2) + s[i]
        }
    }

    fn gradient(&self, i: usize, x: &[f64], _s: &Vec<f64>) -> Vec<f64> {
        if i == 0 {
            (0..x.len()).map(|j| 2.0 * (x[j] - self.targets[j])).collect()
        } else {
            let mut g = vec![0.0; x.len()];
            for j in self.blocks.range(i - 1) {
                g[j] = 2.0 * x[j];
            }
            g
        }
    }
}

impl DecoupledProblem for BlockBalls {
    fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    fn constraint_block(&self, i: usize) -> usize {
        i
    }

    fn block_domain(&self, _k: usize) -> Domain {
        Domain::symmetric_box(2, 3.0)
    }
}
