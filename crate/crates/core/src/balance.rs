//! Covariate-balance metrics, thresholds and the acceptance predicate.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::chisq_quantile;
use crate::error::{Error, Result};
use crate::frame::ExperimentFrame;
use crate::moments::{matrix_moments, CovInverse, InverseMode};
use crate::rng::Purpose;
#[cfg(test)]
use crate::rng::stream;

/// Largest acceptance probability accepted by the χ² threshold; anything
/// closer to one would push the threshold towards infinity.
pub const MAX_PA: f64 = 1.0 - 1e-12;

/// Smallest Monte Carlo draw count for an empirical threshold.
pub const MIN_THRESHOLD_DRAWS: usize = 1000;

/// A treatment vector with fixed arm sizes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    z: Vec<bool>,
    n1: usize,
    n0: usize,
}

impl Assignment {
    pub fn new(z: Vec<bool>) -> Result<Self> {
        let n1 = z.iter().filter(|&&t| t).count();
        let n0 = z.len() - n1;
        if n1 == 0 || n0 == 0 {
            return Err(Error::arg("both arms must contain at least one unit"));
        }
        Ok(Self { z, n1, n0 })
    }

    pub fn from_indicators(z: &[u8]) -> Result<Self> {
        if z.iter().any(|&v| v > 1) {
            return Err(Error::arg("assignment indicators must be 0 or 1"));
        }
        Self::new(z.iter().map(|&v| v == 1).collect())
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    /// The bit complement `1 - z`.
    pub fn mirror(&self) -> Self {
        Self { z: self.z.iter().map(|t| !t).collect(), n1: self.n0, n0: self.n1 }
    }

    pub fn indicators(&self) -> Vec<u8> {
        self.z.iter().map(|&t| t as u8).collect()
    }

    pub(crate) fn from_parts_unchecked(z: Vec<bool>, n1: usize) -> Self {
        let n0 = z.len() - n1;
        Self { z, n1, n0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Mahalanobis,
    /// Squared Euclidean distance between covariate means.
    Euclidean,
    /// `(X̄₁ − X̄₀)' A (X̄₁ − X̄₀)` for a symmetric PSD `A`.
    QuadraticForm(DMatrix<f64>),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mahalanobis => "mahalanobis",
            Metric::Euclidean => "euclidean",
            Metric::QuadraticForm(_) => "quadratic_form",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdSource {
    ChiSquareQuantile,
    MonteCarlo { draws: usize, seed: u64 },
    /// Threshold supplied directly by the caller.
    Fixed { a: f64 },
}

/// What a criterion is before its threshold has been resolved on a frame.
#[derive(Debug, Clone)]
pub struct CriterionSpec {
    pub metric: Metric,
    pub target_pa: f64,
    pub source: ThresholdSource,
    pub inverse_mode: InverseMode,
}

impl CriterionSpec {
    pub fn mahalanobis(target_pa: f64) -> Self {
        Self {
            metric: Metric::Mahalanobis,
            target_pa,
            source: ThresholdSource::ChiSquareQuantile,
            inverse_mode: InverseMode::Strict,
        }
    }
}

/// A metric prepared on one frame: rows of `X^rr` mapped by a linear
/// transform `T` so that every shipped metric equals
/// `scale · |mean₁(W) − mean₀(W)|²` with `W = X^rr T'`.
#[derive(Debug, Clone)]
pub struct BalanceEvaluator {
    rows: Vec<f64>,
    n: usize,
    d: usize,
    mahalanobis_scale: bool,
}

impl BalanceEvaluator {
    pub fn new(frame: &ExperimentFrame, metric: &Metric, mode: InverseMode) -> Result<Self> {
        let x = frame.rr_matrix();
        let d = x.ncols();
        let (transform, mahalanobis_scale) = match metric {
            Metric::Mahalanobis => {
                let mom = matrix_moments(&x)?;
                (Some(CovInverse::new(&mom.cov_xx, mode)?.whitening()), true)
            }
            Metric::Euclidean => (None, false),
            Metric::QuadraticForm(a) => {
                check_psd(a, d)?;
                let eig = SymmetricEigen::new(a.clone());
                let mut t = eig.eigenvectors.transpose();
                for (i, mut row) in t.row_iter_mut().enumerate() {
                    row *= eig.eigenvalues[i].max(0.0).sqrt();
                }
                (Some(t), false)
            }
        };
        let w = match transform {
            Some(t) => &x * t.transpose(),
            None => x,
        };
        let n = w.nrows();
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            rows.extend(w.row(i).iter());
        }
        Ok(Self { rows, n, d, mahalanobis_scale })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn scale(&self, n1: usize, n0: usize) -> f64 {
        if self.mahalanobis_scale {
            (n1 as f64 * n0 as f64) / self.n as f64
        } else {
            1.0
        }
    }

    /// Metric value of `z`. Symmetric in `z ↔ 1 − z` bit for bit.
    pub fn evaluate(&self, z: &[bool]) -> f64 {
        debug_assert_eq!(z.len(), self.n);
        let mut s1 = vec![0.0; self.d];
        let mut s0 = vec![0.0; self.d];
        let mut n1 = 0usize;
        for (i, &t) in z.iter().enumerate() {
            let acc = if t {
                n1 += 1;
                &mut s1
            } else {
                &mut s0
            };
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        let n0 = self.n - n1;
        if n1 == 0 || n0 == 0 {
            return f64::INFINITY;
        }
        let sq: f64 = s1
            .iter()
            .zip(&s0)
            .map(|(a, b)| {
                let diff = a / n1 as f64 - b / n0 as f64;
                diff * diff
            })
            .sum();
        self.scale(n1, n0) * sq
    }

    /// Running sums for pair switching.
    pub(crate) fn switch_state(&self, z: &[bool]) -> SwitchState {
        let mut s1 = vec![0.0; self.d];
        let mut s0 = vec![0.0; self.d];
        let mut n1 = 0;
        for (i, &t) in z.iter().enumerate() {
            let acc = if t {
                n1 += 1;
                &mut s1
            } else {
                &mut s0
            };
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        SwitchState { s1, s0, n1, n0: self.n - n1 }
    }

    /// Metric after moving `treated` to control and `control` to treatment.
    pub(crate) fn switched_value(&self, st: &SwitchState, treated: usize, control: usize) -> f64 {
        let (rt, rc) = (self.row(treated), self.row(control));
        let sq: f64 = (0..self.d)
            .map(|j| {
                let a = st.s1[j] - rt[j] + rc[j];
                let b = st.s0[j] + rt[j] - rc[j];
                let diff = a / st.n1 as f64 - b / st.n0 as f64;
                diff * diff
            })
            .sum();
        self.scale(st.n1, st.n0) * sq
    }

    pub(crate) fn apply_switch(&self, st: &mut SwitchState, treated: usize, control: usize) {
        let (rt, rc) = (self.row(treated), self.row(control));
        for j in 0..self.d {
            st.s1[j] += rc[j] - rt[j];
            st.s0[j] += rt[j] - rc[j];
        }
    }
}

pub(crate) struct SwitchState {
    s1: Vec<f64>,
    s0: Vec<f64>,
    n1: usize,
    n0: usize,
}

fn check_psd(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::arg(format!("quadratic-form matrix is {}x{}, expected {d}x{d}", a.nrows(), a.ncols())));
    }
    let scale = a.abs().max().max(1.0);
    if (a - a.transpose()).abs().max() > 1e-10 * scale {
        return Err(Error::arg("quadratic-form matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::arg("quadratic-form matrix is not positive semidefinite"));
    }
    Ok(())
}

/// Balance criterion with a resolved threshold, bound to one frame.
#[derive(Debug, Clone)]
pub struct BalanceCriterion {
    metric: Metric,
    threshold_a: f64,
    target_pa: f64,
    source: ThresholdSource,
    evaluator: BalanceEvaluator,
}

impl BalanceCriterion {
    /// Resolve the threshold of `spec` for `frame` with `n1` treated units.
    pub fn resolve(spec: &CriterionSpec, frame: &ExperimentFrame, n1: usize) -> Result<Self> {
        if !(spec.target_pa > 0.0 && spec.target_pa < 1.0) {
            return Err(Error::arg(format!("acceptance probability must lie in (0, 1), got {}", spec.target_pa)));
        }
        let evaluator = BalanceEvaluator::new(frame, &spec.metric, spec.inverse_mode)?;
        let threshold_a = match &spec.source {
            ThresholdSource::ChiSquareQuantile => {
                if spec.metric != Metric::Mahalanobis {
                    return Err(Error::arg("the chi-square threshold applies only to the Mahalanobis metric"));
                }
                threshold_from_chisq(frame.d(), spec.target_pa)?
            }
            ThresholdSource::MonteCarlo { draws, seed } => {
                threshold_monte_carlo(&evaluator, n1, spec.target_pa, *draws, *seed)?
            }
            ThresholdSource::Fixed { a } => *a,
        };
        if !(threshold_a > 0.0) {
            return Err(Error::arg(format!("threshold must be positive, got {threshold_a}")));
        }
        Ok(Self { metric: spec.metric.clone(), threshold_a, target_pa: spec.target_pa, source: spec.source.clone(), evaluator })
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn threshold(&self) -> f64 {
        self.threshold_a
    }

    pub fn target_pa(&self) -> f64 {
        self.target_pa
    }

    pub fn source(&self) -> &ThresholdSource {
        &self.source
    }

    pub fn evaluator(&self) -> &BalanceEvaluator {
        &self.evaluator
    }

    pub fn d(&self) -> usize {
        self.evaluator.d()
    }

    pub fn metric_value(&self, z: &[bool]) -> f64 {
        self.evaluator.evaluate(z)
    }

    /// `φ(X, z) < a`.
    pub fn is_acceptable(&self, z: &[bool]) -> bool {
        self.metric_value(z) < self.threshold_a
    }

    /// Same metric and evaluator with another threshold.
    pub fn with_threshold(&self, a: f64) -> Self {
        Self { threshold_a: a, source: ThresholdSource::Fixed { a }, ..self.clone() }
    }
}

pub fn is_acceptable(criterion: &BalanceCriterion, z: &Assignment) -> bool {
    criterion.is_acceptable(z.z())
}

fn mean_difference(x: &DMatrix<f64>, z: &Assignment) -> Result<Vec<f64>> {
    if x.nrows() != z.n() {
        return Err(Error::arg("assignment length does not match the number of units"));
    }
    let (n1, n0) = (z.n1() as f64, z.n0() as f64);
    Ok(x.column_iter()
        .map(|col| {
            let (mut s1, mut s0) = (0.0, 0.0);
            for (v, &t) in col.iter().zip(z.z()) {
                if t {
                    s1 += v
                } else {
                    s0 += v
                }
            }
            s1 / n1 - s0 / n0
        })
        .collect())
}

/// `M = τ̂_X' Σ⁻¹ τ̂_X` with `Σ = n/(n₁n₀) S²_{X^rr}`.
pub fn mahalanobis_distance(frame: &ExperimentFrame, z: &Assignment) -> Result<f64> {
    let x = frame.rr_matrix();
    let diff = mean_difference(&x, z)?;
    let mom = matrix_moments(&x)?;
    let sigma = mom.cov_xx * (z.n() as f64 / (z.n1() as f64 * z.n0() as f64));
    Ok(CovInverse::new(&sigma, InverseMode::Strict)?.quad_form(&diff))
}

pub fn quadratic_form_distance(frame: &ExperimentFrame, z: &Assignment, a: &DMatrix<f64>) -> Result<f64> {
    let d = frame.d();
    if a.nrows() != d || a.ncols() != d {
        return Err(Error::arg(format!("matrix is {}x{}, expected {d}x{d}", a.nrows(), a.ncols())));
    }
    let diff = nalgebra::DVector::from_vec(mean_difference(&frame.rr_matrix(), z)?);
    Ok((diff.transpose() * a * &diff)[(0, 0)])
}

/// The `pa`-quantile of `χ²_d`.
pub fn threshold_from_chisq(d: usize, pa: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::arg("d must be positive"));
    }
    if !(pa > 0.0 && pa < MAX_PA) {
        return Err(Error::arg(format!("acceptance probability must lie in (0, 1 - 1e-12), got {pa}")));
    }
    chisq_quantile(d as f64, pa)
}

/// Empirical threshold from `draws` complete randomizations with `n1`
/// treated units. Returns the order statistic of rank `⌈pa·B⌉ + 1`, the
/// smallest draw `a` for which exactly `⌈pa·B⌉` draws satisfy `φ < a`
/// (absent ties).
pub fn threshold_monte_carlo(evaluator: &BalanceEvaluator, n1: usize, pa: f64, draws: usize, seed: u64) -> Result<f64> {
    if draws < MIN_THRESHOLD_DRAWS {
        return Err(Error::arg(format!("at least {MIN_THRESHOLD_DRAWS} Monte Carlo draws required, got {draws}")));
    }
    if !(pa > 0.0 && pa < 1.0) {
        return Err(Error::arg(format!("acceptance probability must lie in (0, 1), got {pa}")));
    }
    let values = crate::assignment::complete_randomization_metrics(evaluator, n1, draws, seed, Purpose::Threshold)?;
    Ok(empirical_threshold(values, pa))
}

pub(crate) fn empirical_threshold(mut values: Vec<f64>, pa: f64) -> f64 {
    let b = values.len();
    let k = ((pa * b as f64).ceil() as usize).min(b - 1);
    let (_, kth, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *kth
}
