use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{generate_dgp, DgpKind, DgpSetting};
use super::scenario::ScenarioSpec;
use crate::assignment::{complete_randomization, rejection_rerandomize};
use crate::balance::{threshold_from_chisq, BalanceCriterion, CriterionSpec, Metric, ThresholdSource};
use crate::distributions::normal_quantile;
use crate::error::{Error, Result};
use crate::estimators::{estimate, Method, ObservedExperiment};
use crate::frame::{ExperimentFrame, PotentialOutcomes};
use crate::inference::{v_da, MixtureTable};
use crate::models::OutcomeModelSpec;
use crate::moments::{column_moments, CovInverse, InverseMode};
use crate::rng::{derive_seed, stream, Purpose};

/// Ratios whose complete-randomization denominator is at or below this are
/// reported as undefined.
pub const RATIO_FLOOR: f64 = 1e-12;

const MIXTURE_GRID: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub label: String,
    pub method: Method,
    #[serde(default = "OutcomeModelSpec::ols")]
    pub model: OutcomeModelSpec,
}

impl EstimatorSpec {
    pub fn new(label: impl Into<String>, method: Method, model: OutcomeModelSpec) -> Self {
        Self { label: label.into(), method, model }
    }

    /// `D`, `L`, and `DR` with a regression forest.
    pub fn standard() -> Vec<Self> {
        vec![
            Self::new("D", Method::D, OutcomeModelSpec::ols()),
            Self::new("L", Method::L, OutcomeModelSpec::ols()),
            Self::new("DR", Method::Dr, OutcomeModelSpec::forest(0)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMetricKind {
    Mahalanobis,
    Euclidean,
    /// `(X̄₁ − X̄₀)' A (X̄₁ − X̄₀)` with `A` read from a CSV file.
    QuadraticForm,
}

/// How the rerandomization threshold is set from `pa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `χ²_d` quantile; Mahalanobis only.
    ChiSquare,
    /// Empirical quantile of the metric over complete randomizations.
    MonteCarlo { draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Design {
    #[serde(rename = "CR")]
    Complete,
    #[serde(rename = "RR")]
    Rerandomized,
}

impl Design {
    pub fn label(self) -> &'static str {
        match self {
            Design::Complete => "CR",
            Design::Rerandomized => "RR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub setting: DgpKind,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u8>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_pa")]
    pub pa: f64,
    #[serde(default = "default_metric")]
    pub metric: BalanceMetricKind,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdRule,
    #[serde(default = "EstimatorSpec::standard")]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mixture_draws")]
    pub mixture_draws: usize,
    /// Rerandomization attempt budget per draw; defaults to `⌈1000/pa⌉`.
    #[serde(default)]
    pub max_attempts: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_sizes() -> Vec<usize> {
    vec![100, 200, 500, 1000]
}
fn default_d() -> usize {
    10
}
fn default_scenarios() -> Vec<u8> {
    vec![1, 2, 3, 4]
}
fn default_replications() -> usize {
    1000
}
fn default_pa() -> f64 {
    0.01
}
fn default_metric() -> BalanceMetricKind {
    BalanceMetricKind::Mahalanobis
}
fn default_threshold() -> ThresholdRule {
    ThresholdRule::ChiSquare
}
fn default_folds() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.05
}
fn default_mixture_draws() -> usize {
    1_000_000
}

impl SimulationConfig {
    pub fn new(setting: DgpKind, seed: u64) -> Self {
        Self {
            setting,
            sizes: default_sizes(),
            d: default_d(),
            scenarios: default_scenarios(),
            replications: default_replications(),
            pa: default_pa(),
            metric: default_metric(),
            threshold: default_threshold(),
            estimators: EstimatorSpec::standard(),
            folds: default_folds(),
            alpha: default_alpha(),
            mixture_draws: default_mixture_draws(),
            max_attempts: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.scenarios.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("sizes, scenarios and estimators must be non-empty".into()));
        }
        if self.replications < 2 {
            return Err(Error::Config("need at least two replications".into()));
        }
        if !(self.pa > 0.0 && self.pa < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("pa and alpha must lie in (0, 1)".into()));
        }
        match (self.metric, self.threshold) {
            (BalanceMetricKind::QuadraticForm, _) => {
                return Err(Error::Config("simulations support the mahalanobis and euclidean metrics".into()))
            }
            (BalanceMetricKind::Euclidean, ThresholdRule::ChiSquare) => {
                return Err(Error::Config("the Euclidean metric needs a monte_carlo threshold".into()))
            }
            _ => {}
        }
        let mut labels: Vec<&str> = self.estimators.iter().map(|e| e.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("estimator labels must be unique".into()));
        }
        for &s in &self.scenarios {
            ScenarioSpec::standard(s, self.d).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn dataset_seed(&self, n: usize) -> u64 {
        derive_seed(self.seed, n as u64)
    }

    fn cell_seed(&self, n: usize, scenario: u8) -> u64 {
        derive_seed(self.dataset_seed(n), 0x5C00 + scenario as u64)
    }
}

/// One cell of the tidy metrics table. `value` is `None` when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setting: String,
    pub n: usize,
    pub scenario: u8,
    pub design: String,
    pub estimator: String,
    pub metric: String,
    pub value: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn find(&self, n: usize, scenario: u8, design: &str, estimator: &str, metric: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.scenario == scenario && r.design == design && r.estimator == estimator && r.metric == metric)
    }

    /// Value of a cell; `None` if the row is absent or undefined.
    pub fn value(&self, n: usize, scenario: u8, design: &str, estimator: &str, metric: &str) -> Option<f64> {
        self.find(n, scenario, design, estimator, metric).and_then(|r| r.value)
    }

    /// Rows carrying an error diagnostic.
    pub fn errors(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.metric == "error")
    }
}

/// Per-replication output of one estimator.
#[derive(Debug, Clone, Copy)]
struct Draw {
    tau: f64,
    v: f64,
    r2: f64,
    covered: bool,
    rejects: bool,
    width: f64,
}

struct Replication {
    per_design: Vec<Vec<Draw>>,
    attempts: u64,
    audit_failures: u64,
}

/// `R²` of `τ̂_D` on the mean differences of `X^rr`, from the full
/// potential-outcome table (√n-scaled variances throughout).
pub fn population_r2_d(frame: &ExperimentFrame, po: &PotentialOutcomes, n1: usize) -> Result<f64> {
    let n = frame.n();
    let (w1, w0) = (n as f64 / n1 as f64, n as f64 / (n - n1) as f64);
    let cols = frame.rr_cols();
    let m = column_moments(frame, cols)?;
    let x = frame.select(cols);
    let cov = |y: &[f64]| -> (f64, Vec<f64>) {
        let my = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1) as f64;
        let c = (0..cols.len())
            .map(|j| (0..n).map(|i| (y[i] - my) * (x[(i, j)] - m.mean_x[j])).sum::<f64>() / (n - 1) as f64)
            .collect();
        (var, c)
    };
    let (s1, c1) = cov(po.y1());
    let (s0, c0) = cov(po.y0());
    let effects = po.unit_effects();
    let (st, _) = cov(&effects);
    let v = w1 * s1 + w0 * s0 - st;
    if v <= 0.0 {
        return Err(Error::Numerical("difference-in-means variance is not positive".into()));
    }
    let c: Vec<f64> = c1.iter().zip(&c0).map(|(a, b)| w1 * a + w0 * b).collect();
    let inv = CovInverse::new(&(&m.cov_xx * (w1 + w0)), InverseMode::Strict)?;
    Ok((inv.quad_form(&c) / v).clamp(0.0, 1.0))
}

fn criterion_for(cfg: &SimulationConfig, frame: &ExperimentFrame, n1: usize, seed: u64) -> Result<BalanceCriterion> {
    let metric = match cfg.metric {
        BalanceMetricKind::Mahalanobis => Metric::Mahalanobis,
        BalanceMetricKind::Euclidean => Metric::Euclidean,
        BalanceMetricKind::QuadraticForm => return Err(Error::Config("quadratic-form metric is not simulated".into())),
    };
    let source = match cfg.threshold {
        ThresholdRule::ChiSquare => ThresholdSource::ChiSquareQuantile,
        ThresholdRule::MonteCarlo { draws } => ThresholdSource::MonteCarlo { draws, seed: derive_seed(seed, 0x7A) },
    };
    BalanceCriterion::resolve(&CriterionSpec { metric, target_pa: cfg.pa, source, inverse_mode: InverseMode::Strict }, frame, n1)
}

/// Threshold of the Mahalanobis law used for intervals. For other metrics
/// the `χ²_d` quantile at the same acceptance probability stands in.
fn interval_threshold(cfg: &SimulationConfig, criterion: &BalanceCriterion) -> Result<f64> {
    match cfg.metric {
        BalanceMetricKind::Mahalanobis => Ok(criterion.threshold()),
        _ => threshold_from_chisq(criterion.d(), cfg.pa),
    }
}

struct Cell<'a> {
    cfg: &'a SimulationConfig,
    frame: ExperimentFrame,
    po: &'a PotentialOutcomes,
    n1: usize,
    seed: u64,
    criterion: BalanceCriterion,
    table: MixtureTable,
}

impl Cell<'_> {
    fn replicate(&self, r: usize) -> Result<Replication> {
        let n = self.frame.n();
        let cr = complete_randomization(n, self.n1, &mut stream(self.seed, Purpose::CompleteRandomization, r as u64))?;
        let log = rejection_rerandomize(
            &self.criterion,
            self.n1,
            &mut stream(self.seed, Purpose::Rerandomization, r as u64),
            self.cfg.max_attempts,
        )?;
        let audit_failures = u64::from(!self.criterion.is_acceptable(log.accepted.z()));
        let q_cr = normal_quantile(1.0 - self.cfg.alpha / 2.0);
        let mut per_design = Vec::with_capacity(2);
        for (k, z) in [cr, log.accepted].into_iter().enumerate() {
            let y = self.po.observe(z.z());
            let exp = ObservedExperiment::new(self.frame.clone(), z, y)?;
            let est_seed = derive_seed(self.seed, (2 * r + k) as u64);
            let draws = self
                .cfg
                .estimators
                .iter()
                .map(|e| {
                    let rep = estimate(&exp, e.method, &e.model, self.cfg.folds, est_seed)?;
                    let nu = if k == 0 { q_cr } else { self.table.quantile(rep.r2_hat) };
                    let half = nu * rep.std_error();
                    let (lo, hi) = (rep.tau_hat - half, rep.tau_hat + half);
                    let ate = self.po.ate();
                    Ok(Draw {
                        tau: rep.tau_hat,
                        v: rep.v_hat,
                        r2: rep.r2_hat,
                        covered: lo <= ate && ate <= hi,
                        rejects: lo > 0.0 || hi < 0.0,
                        width: hi - lo,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            per_design.push(draws);
        }
        Ok(Replication { per_design, attempts: log.attempts, audit_failures })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > RATIO_FLOOR).then(|| num / den)
}

struct RowSink<'a> {
    setting: &'a str,
    n: usize,
    scenario: u8,
    rows: Vec<MetricRow>,
}

impl RowSink<'_> {
    fn push(&mut self, design: &str, estimator: &str, metric: &str, value: Option<f64>, note: impl Into<String>) {
        self.rows.push(MetricRow {
            setting: self.setting.to_string(),
            n: self.n,
            scenario: self.scenario,
            design: design.to_string(),
            estimator: estimator.to_string(),
            metric: metric.to_string(),
            value,
            note: note.into(),
        });
    }

    fn ratio(&mut self, estimator: &str, metric: &str, num: f64, den: f64) {
        match ratio(num, den) {
            Some(v) => self.push("RR/CR", estimator, metric, Some(v), ""),
            None => self.push("RR/CR", estimator, metric, None, "undefined: CR denominator is zero"),
        }
    }
}

fn run_cell(cfg: &SimulationConfig, frame: &ExperimentFrame, po: &PotentialOutcomes, scenario: u8, sink: &mut RowSink) -> Result<()> {
    let n = frame.n();
    let n1 = n / 2;
    let seed = cfg.cell_seed(n, scenario);
    let spec = ScenarioSpec::standard(scenario, cfg.d)?;
    let frame = spec.apply(frame)?;
    let criterion = criterion_for(cfg, &frame, n1, seed)?;
    let d = criterion.d();
    let a_law = interval_threshold(cfg, &criterion)?;
    let v = v_da(d, a_law);
    let table = MixtureTable::build(d, a_law, 1.0 - cfg.alpha / 2.0, MIXTURE_GRID, cfg.mixture_draws, derive_seed(seed, 0x313))?;
    let cell = Cell { cfg, frame, po, n1, seed, criterion, table };

    let reps: Vec<Replication> = (0..cfg.replications).into_par_iter().map(|r| cell.replicate(r)).collect::<Result<_>>()?;

    let attempts: u64 = reps.iter().map(|r| r.attempts).sum();
    let audit: u64 = reps.iter().map(|r| r.audit_failures).sum();
    sink.push("RR", "", "threshold", Some(cell.criterion.threshold()), cell.criterion.metric().name());
    sink.push("RR", "", "v_da", Some(v), format!("d={d}"));
    sink.push("RR", "", "acceptance_rate", Some(cfg.replications as f64 / attempts as f64), "");
    sink.push("RR", "", "audit_failures", Some(audit as f64), "");

    let labels: Vec<&str> = cfg.estimators.iter().map(|e| e.label.as_str()).collect();
    let column = |design: usize, e: usize, f: fn(&Draw) -> f64| -> Vec<f64> { reps.iter().map(|r| f(&r.per_design[design][e])).collect() };
    let mut var_by = BTreeMap::new();
    for (di, design) in [Design::Complete, Design::Rerandomized].into_iter().enumerate() {
        for (e, label) in labels.iter().enumerate() {
            let tau = column(di, e, |d| d.tau);
            let var = variance(&tau);
            var_by.insert((di, e), var);
            let dl = design.label();
            sink.push(dl, label, "mean", Some(mean(&tau)), "");
            sink.push(dl, label, "variance", Some(var), "");
            sink.push(dl, label, "coverage", Some(mean(&column(di, e, |d| d.covered as u8 as f64))), "");
            sink.push(dl, label, "power", Some(mean(&column(di, e, |d| d.rejects as u8 as f64))), "");
            sink.push(dl, label, "ci_width", Some(mean(&column(di, e, |d| d.width))), "");
            sink.push(dl, label, "mean_v_hat", Some(mean(&column(di, e, |d| d.v))), "");
            sink.push(dl, label, "mean_r2_hat", Some(mean(&column(di, e, |d| d.r2))), "");
        }
    }
    for (e, label) in labels.iter().enumerate() {
        sink.ratio(label, "precision_gain", var_by[&(1, e)], var_by[&(0, e)]);
    }

    // pairwise coherence: mean squared difference between estimators
    let mut msd_sum = [0.0f64; 2];
    let mut pairs = 0usize;
    for a in 0..labels.len() {
        for b in a + 1..labels.len() {
            let name = format!("{}~{}", labels[a], labels[b]);
            let mut msd = [0.0; 2];
            for (di, slot) in msd.iter_mut().enumerate() {
                *slot = mean(&reps.iter().map(|r| (r.per_design[di][a].tau - r.per_design[di][b].tau).powi(2)).collect::<Vec<_>>());
                sink.push(["CR", "RR"][di], &name, "msd", Some(*slot), "");
                msd_sum[di] += *slot;
            }
            sink.ratio(&name, "coherence_gain", msd[1], msd[0]);
            pairs += 1;
        }
    }
    if pairs > 1 {
        sink.ratio("overall", "coherence_gain", msd_sum[1] / pairs as f64, msd_sum[0] / pairs as f64);
    }

    // asymptotic targets where a closed form exists
    let mahalanobis = cfg.metric == BalanceMetricKind::Mahalanobis;
    let r2_d = population_r2_d(&cell.frame, po, n1)?;
    sink.push("", "", "r2_d_rr", Some(r2_d), "population value");
    let covers_rr = cell.frame.rr_cols().iter().all(|c| cell.frame.adj_cols().contains(c));
    for (e, est) in cfg.estimators.iter().enumerate() {
        let target = match est.method {
            Method::D if mahalanobis => Some(1.0 - (1.0 - v) * r2_d),
            Method::L if mahalanobis && covers_rr => Some(1.0),
            _ => None,
        };
        if let Some(t) = target {
            sink.push("RR/CR", labels[e], "precision_target", Some(t), "asymptotic");
        }
    }
    if mahalanobis && cell.frame.rr_cols() == cell.frame.adj_cols() {
        for a in 0..labels.len() {
            for b in a + 1..labels.len() {
                let pair = (cfg.estimators[a].method, cfg.estimators[b].method);
                if matches!(pair, (Method::D, Method::L) | (Method::L, Method::D)) {
                    sink.push("RR/CR", &format!("{}~{}", labels[a], labels[b]), "coherence_target", Some(v), "asymptotic");
                }
            }
        }
    }
    Ok(())
}

/// Runs every `(n, scenario)` cell of `cfg`. A cell that fails (for instance
/// by exhausting the rerandomization budget) contributes a single `error`
/// row and the run continues.
pub fn run_scenario(cfg: &SimulationConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let mut table = MetricsTable::default();
    for &n in &cfg.sizes {
        let (frame, po) = generate_dgp(&DgpSetting { kind: cfg.setting, n, d: cfg.d, seed: cfg.dataset_seed(n) })?;
        for &scenario in &cfg.scenarios {
            let mut sink = RowSink { setting: cfg.setting.label(), n, scenario, rows: Vec::new() };
            match run_cell(cfg, &frame, &po, scenario, &mut sink) {
                Ok(()) => table.rows.append(&mut sink.rows),
                Err(e) => {
                    log::warn!("cell n={n} scenario={scenario} failed: {e}");
                    sink.rows.clear();
                    sink.push("", "", "error", None, e.to_string());
                    table.rows.append(&mut sink.rows);
                }
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(setting: DgpKind) -> SimulationConfig {
        SimulationConfig {
            sizes: vec![60],
            d: 4,
            scenarios: vec![1, 2],
            replications: 40,
            pa: 0.2,
            estimators: vec![
                EstimatorSpec::new("D", Method::D, OutcomeModelSpec::ols()),
                EstimatorSpec::new("L", Method::L, OutcomeModelSpec::ols()),
            ],
            mixture_draws: 20_000,
            ..SimulationConfig::new(setting, 17)
        }
    }

    #[test]
    fn table_has_expected_cells() {
        let t = run_scenario(&small(DgpKind::Linear)).unwrap();
        assert_eq!(t.errors().count(), 0);
        for s in [1, 2] {
            for e in ["D", "L"] {
                for d in ["CR", "RR"] {
                    assert!(t.value(60, s, d, e, "variance").is_some());
                }
                assert!(t.value(60, s, "RR/CR", e, "precision_gain").is_some());
            }
            assert_eq!(t.value(60, s, "RR", "", "audit_failures"), Some(0.0));
            assert!(t.value(60, s, "RR/CR", "D~L", "coherence_gain").is_some());
        }
        assert!(t.value(60, 1, "RR/CR", "D~L", "coherence_target").is_some());
        assert!(t.value(60, 2, "RR/CR", "D~L", "coherence_target").is_none());
    }

    #[test]
    fn self_coherence_is_undefined() {
        let mut cfg = small(DgpKind::Linear);
        cfg.scenarios = vec![1];
        cfg.estimators = vec![
            EstimatorSpec::new("D", Method::D, OutcomeModelSpec::ols()),
            EstimatorSpec::new("D2", Method::D, OutcomeModelSpec::ols()),
        ];
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(t.value(60, 1, "CR", "D~D2", "msd"), Some(0.0));
        assert_eq!(t.value(60, 1, "RR", "D~D2", "msd"), Some(0.0));
        let row = t.find(60, 1, "RR/CR", "D~D2", "coherence_gain").unwrap();
        assert!(row.value.is_none() && row.note.starts_with("undefined"));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = small(DgpKind::NonLinear);
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
    }

    #[test]
    fn impossible_budget_becomes_an_error_row() {
        let mut cfg = small(DgpKind::Linear);
        cfg.scenarios = vec![1];
        cfg.pa = 1e-9;
        cfg.max_attempts = Some(500);
        let t = run_scenario(&cfg).unwrap();
        assert_eq!(t.errors().count(), 1);
    }

    #[test]
    fn population_r2_of_a_pure_linear_outcome_is_one() {
        use nalgebra::DMatrix;
        let x = DMatrix::from_fn(30, 2, |i, j| ((i * (j + 3)) % 7) as f64 + (i as f64).sqrt());
        let f = ExperimentFrame::from_matrix(x.clone()).unwrap();
        let y0: Vec<f64> = (0..30).map(|i| 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
        let y1 = y0.iter().map(|v| v + 1.0).collect();
        let po = PotentialOutcomes::new(y1, y0).unwrap();
        assert!((population_r2_d(&f, &po, 15).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(DgpKind::Linear);
        cfg.metric = BalanceMetricKind::Euclidean;
        assert!(cfg.validate().is_err());
        cfg.threshold = ThresholdRule::MonteCarlo { draws: 2000 };
        assert!(cfg.validate().is_ok());
        cfg.estimators.push(cfg.estimators[0].clone());
        assert!(cfg.validate().is_err());
    }
}
