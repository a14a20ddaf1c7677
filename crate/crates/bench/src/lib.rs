//! Shared fixtures for the benchmarks.

use rerand_core::sim::{generate_dgp, DgpKind, DgpSetting};
use rerand_core::{Assignment, ExperimentFrame, ObservedExperiment, PotentialOutcomes};

/// Linear-setting population with `d` covariates and a balanced split.
pub fn population(n: usize, d: usize) -> (ExperimentFrame, PotentialOutcomes) {
    generate_dgp(&DgpSetting::new(DgpKind::Linear, n, 17).with_d(d)).expect("valid setting")
}

/// Alternating assignment: deterministic and balanced.
pub fn alternating(n: usize) -> Assignment {
    Assignment::new((0..n).map(|i| i % 2 == 0).collect()).expect("both arms non-empty")
}

pub fn observed(n: usize, d: usize) -> ObservedExperiment {
    let (frame, po) = population(n, d);
    let z = alternating(n);
    let y = po.observe(z.z());
    ObservedExperiment::new(frame, z, y).expect("consistent sizes")
}
