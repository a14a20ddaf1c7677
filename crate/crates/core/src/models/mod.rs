//! Outcome models `μ̂_z` and the cross-fitting fold machinery.
//!
//! Anything implementing [`Learner`] can be plugged into the doubly robust
//! estimator. Two learners ship: ordinary least squares and a bagged
//! regression forest.

mod folds;
mod forest;
mod ols;
mod stepwise;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use folds::{make_folds, FoldPlan};
pub use forest::{Forest, ForestParams};
pub use ols::{fit_ols, OlsFit};
pub use stepwise::stepwise_select;

/// A fitted regression function.
pub trait OutcomeModel: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

/// Something that can fit an [`OutcomeModel`] from data.
///
/// `seed` feeds any internal randomness; deterministic learners ignore it.
pub trait Learner: Send + Sync {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn OutcomeModel>>;

    fn name(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Ols,
    RegressionForest(ForestParams),
}

/// Which covariates an outcome model sees.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnChoice {
    /// The frame's adjustment set.
    #[default]
    Adjustment,
    /// Explicit covariate indices.
    Columns(Vec<usize>),
    /// Forward stepwise selection from the adjustment set, run on the
    /// observed data with the estimator's folds.
    Stepwise,
}

/// Model family plus the covariates it is fit on.
///
/// Serialized flat, e.g. `{ kind = "regression_forest", columns = "stepwise",
/// forest = { n_trees = 50 } }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct OutcomeModelSpec {
    pub kind: ModelKind,
    pub columns: ColumnChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ModelName {
    Ols,
    RegressionForest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    kind: ModelName,
    #[serde(default)]
    columns: ColumnChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forest: Option<ForestParams>,
}

impl TryFrom<RawModelSpec> for OutcomeModelSpec {
    type Error = String;

    fn try_from(raw: RawModelSpec) -> std::result::Result<Self, String> {
        let kind = match (raw.kind, raw.forest) {
            (ModelName::Ols, None) => ModelKind::Ols,
            (ModelName::Ols, Some(_)) => return Err("forest parameters given for an ols model".into()),
            (ModelName::RegressionForest, p) => ModelKind::RegressionForest(p.unwrap_or_default()),
        };
        Ok(Self { kind, columns: raw.columns })
    }
}

impl From<OutcomeModelSpec> for RawModelSpec {
    fn from(spec: OutcomeModelSpec) -> Self {
        let (kind, forest) = match spec.kind {
            ModelKind::Ols => (ModelName::Ols, None),
            ModelKind::RegressionForest(p) => (ModelName::RegressionForest, Some(p)),
        };
        RawModelSpec { kind, columns: spec.columns, forest }
    }
}

impl OutcomeModelSpec {
    pub fn ols() -> Self {
        Self { kind: ModelKind::Ols, columns: ColumnChoice::Adjustment }
    }

    /// Forest with the default hyperparameters and the given seed.
    pub fn forest(seed: u64) -> Self {
        Self { kind: ModelKind::RegressionForest(ForestParams { seed, ..ForestParams::default() }), columns: ColumnChoice::Adjustment }
    }

    pub fn with_columns(mut self, columns: ColumnChoice) -> Self {
        self.columns = columns;
        self
    }
}

impl Learner for ModelKind {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn OutcomeModel>> {
        match self {
            ModelKind::Ols => Ok(Box::new(fit_ols(x, y)?)),
            ModelKind::RegressionForest(params) => Ok(Box::new(Forest::fit(params, x, y, seed)?)),
        }
    }

    fn name(&self) -> String {
        match self {
            ModelKind::Ols => "ols".into(),
            ModelKind::RegressionForest(p) => format!("forest({} trees)", p.n_trees),
        }
    }
}

impl Learner for OutcomeModelSpec {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn OutcomeModel>> {
        self.kind.fit(x, y, seed)
    }

    fn name(&self) -> String {
        self.kind.name()
    }
}

/// Convenience: fit a spec and return the model.
pub fn fit(spec: &OutcomeModelSpec, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn OutcomeModel>> {
    spec.fit(x, y, seed)
}

/// Rows of `x` at the given indices.
pub(crate) fn take_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}
