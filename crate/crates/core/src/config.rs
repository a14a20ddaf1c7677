//! TOML run configuration. Unknown keys are rejected everywhere.
//!
//! ```toml
//! seed = 20240101
//!
//! [criterion]
//! metric = "mahalanobis"
//! pa = 0.01
//! rr_columns = ["age", "income"]
//!
//! [estimator]
//! method = "DR"
//! folds = 2
//!
//! [model]
//! kind = "regression_forest"
//!
//! [inference]
//! alpha = 0.05
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::{CriterionSpec, Metric, ThresholdSource};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::frame::ExperimentFrame;
use crate::inference::TieRule;
use crate::io::Table;
use crate::models::OutcomeModelSpec;
use crate::moments::InverseMode;
use crate::rng::derive_seed;
use crate::sim::{BalanceMetricKind, SimulationConfig, ThresholdRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriterionConfig {
    pub metric: BalanceMetricKind,
    pub pa: f64,
    pub threshold: ThresholdRule,
    /// Design covariates by name; all columns when absent.
    pub rr_columns: Option<Vec<String>>,
    /// Adjustment covariates by name; all columns when absent.
    pub adj_columns: Option<Vec<String>>,
    /// Treated-arm size; `⌊n/2⌋` when absent.
    pub n1: Option<usize>,
    pub inverse: InverseMode,
    pub max_attempts: Option<u64>,
    /// CSV holding the `d × d` matrix of a quadratic-form metric (header row
    /// required).
    pub matrix: Option<PathBuf>,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            metric: BalanceMetricKind::Mahalanobis,
            pa: 0.01,
            threshold: ThresholdRule::ChiSquare,
            rr_columns: None,
            adj_columns: None,
            n1: None,
            inverse: InverseMode::Strict,
            max_attempts: None,
            matrix: None,
        }
    }
}

impl CriterionConfig {
    /// Unresolved criterion; Monte Carlo thresholds draw from a seed derived
    /// from `seed`.
    pub fn spec(&self, seed: u64) -> Result<CriterionSpec> {
        let metric = match (self.metric, &self.matrix) {
            (BalanceMetricKind::Mahalanobis, None) => Metric::Mahalanobis,
            (BalanceMetricKind::Euclidean, None) => Metric::Euclidean,
            (BalanceMetricKind::QuadraticForm, Some(path)) => Metric::QuadraticForm(Table::read(path)?.complete_matrix()?),
            (BalanceMetricKind::QuadraticForm, None) => return Err(Error::Config("quadratic_form needs criterion.matrix".into())),
            (_, Some(_)) => return Err(Error::Config("criterion.matrix applies only to quadratic_form".into())),
        };
        let source = match self.threshold {
            ThresholdRule::ChiSquare => ThresholdSource::ChiSquareQuantile,
            ThresholdRule::MonteCarlo { draws } => ThresholdSource::MonteCarlo { draws, seed: derive_seed(seed, 0x7A) },
        };
        Ok(CriterionSpec { metric, target_pa: self.pa, source, inverse_mode: self.inverse })
    }

    /// `frame` with the configured design and adjustment columns.
    pub fn apply_columns(&self, frame: &ExperimentFrame) -> Result<ExperimentFrame> {
        let all: Vec<usize> = (0..frame.k()).collect();
        let rr = match &self.rr_columns {
            Some(names) => frame.resolve_names(names)?,
            None => all.clone(),
        };
        let adj = match &self.adj_columns {
            Some(names) => frame.resolve_names(names)?,
            None => all,
        };
        frame.with_columns(rr, adj)
    }

    pub fn n1_for(&self, n: usize) -> usize {
        self.n1.unwrap_or(n / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: Method,
    pub folds: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { method: Method::L, folds: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub alpha: f64,
    pub mixture_draws: usize,
    pub null_draws: usize,
    pub tie_rule: TieRule,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { alpha: 0.05, mixture_draws: 1_000_000, null_draws: 999, tie_rule: TieRule::Strict }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stochastic step derives its seed from it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub criterion: CriterionConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default = "OutcomeModelSpec::ols")]
    pub model: OutcomeModelSpec,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            criterion: CriterionConfig::default(),
            estimator: EstimatorConfig::default(),
            model: OutcomeModelSpec::ols(),
            inference: InferenceConfig::default(),
            simulation: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}
