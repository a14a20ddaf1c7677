//! Treatment-assignment generators: complete randomization, rejection
//! sampling, mirror allocations and pair switching.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{Assignment, BalanceCriterion, BalanceEvaluator};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Outcome of one rerandomization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawLog {
    pub accepted: Assignment,
    /// Candidate assignments (or switches) whose metric was evaluated,
    /// including the accepted one.
    pub attempts: u64,
    pub final_metric: f64,
}

/// Uniform draw over all `n choose n1` assignments (partial Fisher–Yates).
pub fn complete_randomization<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Result<Assignment> {
    if n1 == 0 || n1 >= n {
        return Err(Error::arg(format!("need 1 <= n1 <= n - 1, got n = {n}, n1 = {n1}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut z = vec![false; n];
    for i in 0..n1 {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
        z[idx[i]] = true;
    }
    Ok(Assignment::from_parts_unchecked(z, n1))
}

/// Metric values of `draws` complete randomizations, draw `b` using stream
/// `(seed, purpose, b)`.
pub(crate) fn complete_randomization_metrics(
    evaluator: &BalanceEvaluator,
    n1: usize,
    draws: usize,
    seed: u64,
    purpose: Purpose,
) -> Result<Vec<f64>> {
    (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, purpose, b as u64);
            complete_randomization(evaluator.n(), n1, &mut rng).map(|z| evaluator.evaluate(z.z()))
        })
        .collect()
}

/// Attempt budget used when the caller does not supply one: `⌈1000 / pa⌉`.
pub fn default_max_attempts(pa: f64) -> u64 {
    (1000.0 / pa).ceil() as u64
}

/// Draw complete randomizations until one satisfies the criterion.
pub fn rejection_rerandomize<R: Rng + ?Sized>(
    criterion: &BalanceCriterion,
    n1: usize,
    rng: &mut R,
    max_attempts: Option<u64>,
) -> Result<DrawLog> {
    let max_attempts = max_attempts.unwrap_or_else(|| default_max_attempts(criterion.target_pa()));
    let n = criterion.evaluator().n();
    let mut best = f64::INFINITY;
    for attempt in 1..=max_attempts {
        let z = complete_randomization(n, n1, rng)?;
        let m = criterion.metric_value(z.z());
        if m < criterion.threshold() {
            return Ok(DrawLog { accepted: z, attempts: attempt, final_metric: m });
        }
        best = best.min(m);
    }
    Err(Error::AcceptanceTimeout { attempts: max_attempts, best_metric: best, threshold: criterion.threshold() })
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub assignments: Vec<Assignment>,
    /// Total number of metric evaluations spent.
    pub metric_evaluations: u64,
}

/// `count` acceptable assignments. Draw `j` uses stream `(seed, Batch, j)`,
/// so the batch does not depend on the number of worker threads. With
/// `use_mirrors`, every accepted `z` is followed by its complement `1 − z`.
pub fn sample_acceptable_batch(
    criterion: &BalanceCriterion,
    n1: usize,
    count: usize,
    seed: u64,
    use_mirrors: bool,
    max_attempts: Option<u64>,
) -> Result<Batch> {
    if count == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let draws = if use_mirrors { count.div_ceil(2) } else { count };
    let logs: Vec<DrawLog> = (0..draws)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, Purpose::Batch, j as u64);
            rejection_rerandomize(criterion, n1, &mut rng, max_attempts)
        })
        .collect::<Result<_>>()?;
    let metric_evaluations = logs.iter().map(|l| l.attempts).sum();
    let mut assignments = Vec::with_capacity(count);
    for log in logs {
        if use_mirrors {
            let m = log.accepted.mirror();
            assignments.push(log.accepted);
            assignments.push(m);
        } else {
            assignments.push(log.accepted);
        }
    }
    assignments.truncate(count);
    Ok(Batch { assignments, metric_evaluations })
}

/// Greedy pair switching from `z0`: propose swapping a random treated unit
/// with a random control unit and keep the swap whenever it does not
/// increase the metric, until the metric falls below the threshold.
///
/// Outputs always lie in the acceptance set but are not uniform on it.
pub fn pair_switch_rerandomize<R: Rng + ?Sized>(
    criterion: &BalanceCriterion,
    z0: &Assignment,
    rng: &mut R,
    max_switches: u64,
) -> Result<DrawLog> {
    let ev = criterion.evaluator();
    if z0.n() != ev.n() {
        return Err(Error::arg("starting assignment length does not match the frame"));
    }
    let a = criterion.threshold();
    let mut z = z0.z().to_vec();
    let mut current = ev.evaluate(&z);
    let mut attempts = 1u64;
    if current < a {
        return Ok(DrawLog { accepted: z0.clone(), attempts, final_metric: current });
    }
    let mut treated: Vec<usize> = (0..z.len()).filter(|&i| z[i]).collect();
    let mut control: Vec<usize> = (0..z.len()).filter(|&i| !z[i]).collect();
    let mut state = ev.switch_state(&z);
    while attempts <= max_switches {
        let ti = rng.random_range(0..treated.len());
        let ci = rng.random_range(0..control.len());
        let (t, c) = (treated[ti], control[ci]);
        let candidate = ev.switched_value(&state, t, c);
        attempts += 1;
        if candidate <= current {
            ev.apply_switch(&mut state, t, c);
            z[t] = false;
            z[c] = true;
            treated[ti] = c;
            control[ci] = t;
            current = candidate;
            if current < a {
                // confirm with a fresh evaluation; running sums drift slightly
                let exact = ev.evaluate(&z);
                if exact < a {
                    let accepted = Assignment::from_parts_unchecked(z, z0.n1());
                    return Ok(DrawLog { accepted, attempts, final_metric: exact });
                }
                current = exact;
                state = ev.switch_state(&z);
            }
        }
    }
    Err(Error::AcceptanceTimeout { attempts: max_switches, best_metric: current, threshold: a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{CriterionSpec, ThresholdSource};
    use crate::frame::ExperimentFrame;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::HashMap;

    fn gaussian_frame(n: usize, d: usize, seed: u64) -> ExperimentFrame {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        ExperimentFrame::from_matrix(x).unwrap()
    }

    fn criterion(frame: &ExperimentFrame, pa: f64) -> BalanceCriterion {
        BalanceCriterion::resolve(&CriterionSpec::mahalanobis(pa), frame, frame.n() / 2).unwrap()
    }

    #[test]
    fn two_unit_uniformity() {
        let mut rng = stream(1, Purpose::General, 0);
        let draws = 100_000;
        let first = (0..draws).filter(|_| complete_randomization(2, 1, &mut rng).unwrap().z()[0]).count();
        assert!((first as f64 / draws as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn six_choose_three_enumeration() {
        // all 20 assignments with frequency 0.05 ± 0.005
        let mut rng = stream(2, Purpose::General, 0);
        let mut counts: HashMap<Vec<bool>, usize> = HashMap::new();
        let draws = 1_000_000;
        for _ in 0..draws {
            *counts.entry(complete_randomization(6, 3, &mut rng).unwrap().z().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        for (z, c) in counts {
            assert_eq!(z.iter().filter(|&&t| t).count(), 3);
            assert!((c as f64 / draws as f64 - 0.05).abs() < 0.005);
        }
    }

    #[test]
    fn complete_randomization_is_deterministic() {
        let a = complete_randomization(50, 20, &mut stream(3, Purpose::General, 0)).unwrap();
        let b = complete_randomization(50, 20, &mut stream(3, Purpose::General, 0)).unwrap();
        assert_eq!(a, b);
        assert!(complete_randomization(5, 0, &mut stream(3, Purpose::General, 0)).is_err());
        assert!(complete_randomization(5, 5, &mut stream(3, Purpose::General, 0)).is_err());
    }

    #[test]
    fn near_certain_acceptance_takes_one_attempt() {
        let f = gaussian_frame(40, 3, 1);
        let c = criterion(&f, 1.0 - 1e-12 - 1e-13);
        let log = rejection_rerandomize(&c, 20, &mut stream(4, Purpose::General, 0), None).unwrap();
        assert_eq!(log.attempts, 1);
    }

    #[test]
    fn mean_attempts_follow_geometric_law() {
        // pa = 0.01: 1000 accepted draws, mean attempts within [80, 125].
        let f = gaussian_frame(200, 4, 2);
        let c = criterion(&f, 0.01);
        let mut rng = stream(5, Purpose::General, 0);
        let mut total = 0u64;
        for _ in 0..1000 {
            let log = rejection_rerandomize(&c, 100, &mut rng, None).unwrap();
            assert!(log.final_metric < c.threshold());
            assert!(c.is_acceptable(log.accepted.z()));
            total += log.attempts;
        }
        let mean = total as f64 / 1000.0;
        assert!((80.0..=125.0).contains(&mean), "mean attempts {mean}");
    }

    #[test]
    fn timeout_reports_best_metric() {
        let f = gaussian_frame(30, 3, 3);
        let spec = CriterionSpec { source: ThresholdSource::Fixed { a: 1e-12 }, ..CriterionSpec::mahalanobis(0.01) };
        let c = BalanceCriterion::resolve(&spec, &f, 15).unwrap();
        match rejection_rerandomize(&c, 15, &mut stream(6, Purpose::General, 0), Some(50)) {
            Err(Error::AcceptanceTimeout { attempts, best_metric, .. }) => {
                assert_eq!(attempts, 50);
                assert!(best_metric.is_finite() && best_metric > 0.0);
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn mirror_batches() {
        let f = gaussian_frame(60, 4, 4);
        let c = criterion(&f, 0.05);
        let b = sample_acceptable_batch(&c, 30, 2, 7, true, None).unwrap();
        assert_eq!(b.assignments[1], b.assignments[0].mirror());
        let with = sample_acceptable_batch(&c, 30, 2000, 7, true, None).unwrap();
        let without = sample_acceptable_batch(&c, 30, 2000, 7, false, None).unwrap();
        assert_eq!(with.assignments.len(), 2000);
        assert!(with.assignments.iter().chain(&without.assignments).all(|z| c.is_acceptable(z.z())));
        let ratio = with.metric_evaluations as f64 / without.metric_evaluations as f64;
        assert!(ratio <= 0.55, "mirror/plain evaluation ratio {ratio}");
    }

    #[test]
    fn batch_is_identical_across_thread_counts() {
        let f = gaussian_frame(40, 3, 5);
        let c = criterion(&f, 0.05);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| sample_acceptable_batch(&c, 20, 33, 11, false, None).unwrap().assignments)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn pair_switch_fixpoint_and_arm_sizes() {
        let f = gaussian_frame(50, 3, 6);
        let c = criterion(&f, 0.01);
        let mut rng = stream(8, Purpose::General, 0);
        let ok = rejection_rerandomize(&c, 25, &mut rng, None).unwrap().accepted;
        let log = pair_switch_rerandomize(&c, &ok, &mut rng, 10).unwrap();
        assert_eq!(log.attempts, 1);
        assert_eq!(log.accepted, ok);

        let z0 = complete_randomization(50, 20, &mut rng).unwrap();
        let log = pair_switch_rerandomize(&c, &z0, &mut rng, 100_000).unwrap();
        assert_eq!(log.accepted.n1(), 20);
        assert_eq!(log.accepted.z().iter().filter(|&&t| t).count(), 20);
        assert!(c.is_acceptable(log.accepted.z()));
    }

    #[test]
    fn pair_switch_terminates_at_n100_d10() {
        let f = gaussian_frame(100, 10, 9);
        let c = criterion(&f, 0.01);
        for trial in 0..500 {
            let mut rng = stream(10, Purpose::PairSwitch, trial);
            let z0 = complete_randomization(100, 50, &mut rng).unwrap();
            let log = pair_switch_rerandomize(&c, &z0, &mut rng, 100_000).unwrap();
            assert!(log.final_metric < c.threshold());
            assert_eq!(log.accepted.n1(), 50);
        }
    }

    #[test]
    fn marginal_treatment_probability_is_n1_over_n() {
        let f = gaussian_frame(20, 3, 12);
        let c = criterion(&f, 0.05);
        // equal arms: the z <-> 1 - z symmetry then pins every marginal at 1/2
        let batch = sample_acceptable_batch(&c, 10, 100_000, 13, false, None).unwrap();
        let mut counts = [0usize; 20];
        for z in &batch.assignments {
            for (i, &t) in z.z().iter().enumerate() {
                counts[i] += t as usize;
            }
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.5).abs() < 0.01);
        }
    }
}
