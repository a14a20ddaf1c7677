//! Missing covariates (missingness-indicator augmentation) and missing
//! outcomes (response-weighted doubly robust estimation).

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::balance::Assignment;
use crate::error::{Error, Result};
use crate::estimators::{dr_core, resolve_columns, EstimateReport, ObservedExperiment, ResponseWeights};
use crate::frame::ExperimentFrame;
use crate::models::{make_folds, Learner, OutcomeModelSpec};
use crate::rng::{stream, Purpose};

/// Floor applied to estimated response probabilities.
pub const MIN_RESPONSE_PROB: f64 = 0.01;

/// Covariate matrix with an explicit observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    observed: DMatrix<bool>,
    names: Vec<String>,
}

impl MaskedMatrix {
    /// `values` may hold anything in unobserved cells; observed cells must be
    /// finite.
    pub fn new(values: DMatrix<f64>, observed: DMatrix<bool>, names: Vec<String>) -> Result<Self> {
        if values.shape() != observed.shape() {
            return Err(Error::arg("value matrix and mask differ in shape"));
        }
        if names.len() != values.ncols() {
            return Err(Error::arg("one name per column is required"));
        }
        if values.ncols() == 0 {
            return Err(Error::arg("need at least one column"));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if observed[(i, j)] && !values[(i, j)].is_finite() {
                    return Err(Error::arg(format!("observed cell ({i}, {j}) is not finite")));
                }
            }
        }
        Ok(Self { values, observed, names })
    }

    /// Builds the mask from `None` cells, given column by column.
    pub fn from_columns(columns: Vec<Vec<Option<f64>>>, names: Vec<String>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::arg("columns differ in length"));
        }
        let k = columns.len();
        let values = DMatrix::from_fn(n, k, |i, j| columns[j][i].unwrap_or(f64::NAN));
        let observed = DMatrix::from_fn(n, k, |i, j| columns[j][i].is_some());
        Self::new(values, observed, names)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[(i, j)]
    }

    /// Number of missing cells per column.
    pub fn missing_counts(&self) -> Vec<usize> {
        self.observed.column_iter().map(|c| c.iter().filter(|o| !**o).count()).collect()
    }
}

/// Missingness-indicator augmentation with missing cells imputed as zero.
///
/// Every column with a missing cell becomes an imputed value column followed
/// by a 0/1 indicator column (`1` = missing). Columns without missing cells
/// pass through; a column missing everywhere keeps only its indicator.
pub fn augment_missing_indicators(m: &MaskedMatrix) -> Result<ExperimentFrame> {
    augment_with_fill(m, 0.0)
}

/// Augmentation with an arbitrary imputation constant; exists so the
/// invariance of adjusted estimates to that constant can be checked.
#[doc(hidden)]
pub fn augment_with_fill(m: &MaskedMatrix, fill: f64) -> Result<ExperimentFrame> {
    let n = m.nrows();
    let missing = m.missing_counts();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for j in 0..m.ncols() {
        let name = &m.names[j];
        if missing[j] < n {
            cols.push((0..n).map(|i| if m.observed[(i, j)] { m.values[(i, j)] } else { fill }).collect());
            names.push(name.clone());
        } else {
            warn!("column {name:?} is missing for every unit; keeping only its indicator");
        }
        if missing[j] > 0 {
            cols.push((0..n).map(|i| if m.observed[(i, j)] { 0.0 } else { 1.0 }).collect());
            names.push(format!("{name}_missing"));
        }
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let all: Vec<usize> = (0..cols.len()).collect();
    ExperimentFrame::new(x, names, all.clone(), all)
}

/// Which outcomes were observed, and the model for `Ê(R | X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub r: Vec<bool>,
    pub response_model: OutcomeModelSpec,
}

impl ResponseRecord {
    /// Observed flags from optional outcomes, with the default least-squares
    /// response model.
    pub fn from_outcomes(y: &[Option<f64>]) -> Self {
        Self { r: y.iter().map(Option::is_some).collect(), response_model: OutcomeModelSpec::ols() }
    }
}

/// Cross-fitted doubly robust estimate when some outcomes are missing at
/// random. Residual terms are reweighted by `R / Ê(R(z) | X)`, with the
/// response model fit per arm on the same training folds as the outcome
/// model and clipped to `[MIN_RESPONSE_PROB, 1]`.
pub fn tau_dr_missing_outcomes(
    frame: &ExperimentFrame,
    z: &Assignment,
    y: &[Option<f64>],
    record: &ResponseRecord,
    spec: &OutcomeModelSpec,
    k: usize,
    seed: u64,
) -> Result<EstimateReport> {
    if y.len() != z.n() || record.r.len() != z.n() {
        return Err(Error::arg("outcomes, response flags and assignment differ in length"));
    }
    if y.iter().zip(&record.r).any(|(v, &r)| v.is_some() != r) {
        return Err(Error::arg("response flags disagree with the missing outcomes"));
    }
    for arm in [true, false] {
        let seen = (0..z.n()).filter(|&i| z.z()[i] == arm && record.r[i]).count();
        if seen < 2 {
            return Err(Error::arg(format!("arm {} has fewer than two observed outcomes", arm as u8)));
        }
    }
    // Placeholders for missing outcomes never enter the estimate: their
    // residual terms are multiplied by R = 0.
    let filled: Vec<f64> = y.iter().map(|v| v.unwrap_or(0.0)).collect();
    let exp = ObservedExperiment::new(frame.clone(), z.clone(), filled)?;
    let plan = make_folds(z, k, &mut stream(seed, Purpose::Folds, 0))?;
    let cols = resolve_columns(&exp, &spec.columns, &plan)?;
    let weights = ResponseWeights { observed: &record.r, learner: &record.response_model };
    let (mut report, _) = dr_core(&exp, spec, &cols, &plan, seed, true, Some(&weights))?;
    let clipped = report.diagnostics.clipped_responses.unwrap_or(0);
    if clipped > 0 {
        warn!("{clipped} estimated response probabilities were clipped to [{MIN_RESPONSE_PROB}, 1]");
    }
    report.diagnostics.notes.push(format!("response model: {} clipped to [{MIN_RESPONSE_PROB}, 1]", Learner::name(&record.response_model)));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{tau_dr, tau_l};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn masked(n: usize, seed: u64, rate: f64) -> MaskedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = (0..3)
            .map(|j| {
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.sample(StandardNormal);
                        (j == 0 || rng.random::<f64>() >= rate).then_some(v)
                    })
                    .collect()
            })
            .collect();
        MaskedMatrix::from_columns(cols, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn complete_data_passes_through() {
        let m = masked(10, 1, 0.0);
        let f = augment_missing_indicators(&m).unwrap();
        assert_eq!(f.k(), 3);
        assert_eq!(f.names(), m.names());
        for i in 0..10 {
            for j in 0..3 {
                assert_eq!(f.covariates()[(i, j)], m.values[(i, j)]);
            }
        }
    }

    #[test]
    fn fully_missing_column_keeps_indicator_only() {
        let cols = vec![vec![Some(1.0), Some(2.0), Some(0.5), Some(3.0)], vec![None; 4]];
        let m = MaskedMatrix::from_columns(cols, vec!["x".into(), "gone".into()]).unwrap();
        let f = augment_missing_indicators(&m).unwrap();
        assert_eq!(f.names(), &["x".to_string(), "gone_missing".to_string()]);
        assert!(f.covariates().column(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn indicators_align_with_mask() {
        let m = masked(50, 2, 0.3);
        let f = augment_missing_indicators(&m).unwrap();
        assert_eq!(f.k(), 5);
        for (src, ind) in [(1, 2), (2, 4)] {
            for i in 0..50 {
                let v = f.covariates()[(i, ind)];
                assert_eq!(v, if m.is_observed(i, src) { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn augmentation_is_idempotent() {
        let m = masked(30, 3, 0.2);
        let f = augment_missing_indicators(&m).unwrap();
        let x = f.covariates().clone();
        let again = MaskedMatrix::new(x.clone(), DMatrix::from_element(x.nrows(), x.ncols(), true), f.names().to_vec()).unwrap();
        let f2 = augment_missing_indicators(&again).unwrap();
        assert_eq!(f2.covariates(), f.covariates());
        assert_eq!(f2.names(), f.names());
    }

    #[test]
    fn imputation_constant_does_not_move_linear_adjustment() {
        let m = masked(80, 4, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Assignment::new((0..80).map(|i| i % 2 == 0).collect()).unwrap();
        let y: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let est = |fill: f64| {
            let f = augment_with_fill(&m, fill).unwrap();
            tau_l(&ObservedExperiment::new(f, z.clone(), y.clone()).unwrap()).unwrap().tau_hat
        };
        assert!((est(0.0) - est(7.0)).abs() < 1e-8);
    }

    fn experiment(n: usize, seed: u64) -> (ExperimentFrame, Assignment, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = Assignment::new((0..n).map(|i| i % 2 == 0).collect()).unwrap();
        let y = (0..n).map(|i| x[(i, 0)] + x[(i, 1)] + if z.z()[i] { 1.0 } else { 0.0 } + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        (ExperimentFrame::from_matrix(x).unwrap(), z, y)
    }

    #[test]
    fn all_observed_reduces_to_tau_dr() {
        let (f, z, y) = experiment(60, 5);
        let opt: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
        let rec = ResponseRecord::from_outcomes(&opt);
        let spec = OutcomeModelSpec::ols();
        let a = tau_dr_missing_outcomes(&f, &z, &opt, &rec, &spec, 2, 3).unwrap();
        let b = tau_dr(&ObservedExperiment::new(f, z, y).unwrap(), &spec, 2, 3).unwrap().0;
        assert!((a.tau_hat - b.tau_hat).abs() < 1e-12);
        assert!((a.v_hat - b.v_hat).abs() < 1e-12);
        assert_eq!(a.diagnostics.clipped_responses, Some(0));
    }

    #[test]
    fn missing_outcome_value_is_never_read() {
        let (f, z, y) = experiment(60, 6);
        let mut opt: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
        opt[4] = None;
        opt[7] = None;
        let rec = ResponseRecord::from_outcomes(&opt);
        let spec = OutcomeModelSpec::ols();
        let a = tau_dr_missing_outcomes(&f, &z, &opt, &rec, &spec, 2, 3).unwrap();
        // the estimate must not depend on what the missing cells held
        let filled: Vec<f64> = opt.iter().map(|v| v.unwrap_or(1e6)).collect();
        let exp = ObservedExperiment::new(f.clone(), z.clone(), filled).unwrap();
        let plan = make_folds(&z, 2, &mut stream(3, Purpose::Folds, 0)).unwrap();
        let w = ResponseWeights { observed: &rec.r, learner: &rec.response_model };
        let b = dr_core(&exp, &spec, &[0, 1], &plan, 3, true, Some(&w)).unwrap().0;
        assert_eq!(a.tau_hat, b.tau_hat);
    }

    #[test]
    fn mismatched_flags_are_rejected() {
        let (f, z, y) = experiment(20, 7);
        let opt: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
        let mut rec = ResponseRecord::from_outcomes(&opt);
        rec.r[0] = false;
        assert!(tau_dr_missing_outcomes(&f, &z, &opt, &rec, &OutcomeModelSpec::ols(), 2, 0).is_err());
    }
}
