//! Benchmark problem instances.
//!
//! Three wireless design problems exercise the solver end to end, each with
//! a different surrogate flavor and domain geometry:
//!
//! * [`mimo_covariance`]: transmit covariance design with expected-rate
//!   floors, PSD-cone blocks, structured surrogates with a convex/concave
//!   split.
//! * [`robust_beamforming`]: outage-constrained beamforming with a smoothed
//!   step penalty, ball-constrained blocks, recursive surrogates.
//! * [`hybrid_beamforming`]: analog/digital beamforming with a sum-rate
//!   objective and a power cap, box domain, quadratic structured surrogates
//!   that hit the closed-form subproblem paths.
//!
//! [`synthetic`] holds small hand-checkable instances used by the test
//! suite, and [`saa`] wraps any problem so a frozen batch of samples can be
//! solved as a deterministic baseline.

pub mod hybrid_beamforming;
pub mod mimo_covariance;
pub mod robust_beamforming;
pub mod saa;
pub mod synthetic;
