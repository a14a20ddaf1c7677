//! Difference-in-means, linearly adjusted and doubly robust ATE estimators,
//! with the variance and `R²` estimates that drive mixture inference.
//!
//! Variances follow the √n-scaled convention: `v_hat` estimates the
//! asymptotic variance of `√n(τ̂ − τ)`, so a standard error is
//! `sqrt(v_hat / n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::balance::Assignment;
use crate::distributions::two_sided_normal_pvalue;
use crate::error::{Error, Result};
use crate::frame::ExperimentFrame;
use crate::models::{fit_ols, make_folds, stepwise_select, take_rows, ColumnChoice, FoldPlan, Learner, OutcomeModelSpec};
use crate::moments::{arm_moments, matrix_moments, ArmMoments, CovInverse, InverseMode};
use crate::rng::{derive_seed, stream, Purpose};

/// Largest adjustment set `phack_min_pvalue` will enumerate exhaustively.
pub const MAX_PHACK_COLUMNS: usize = 12;

/// Covariates, assignment and observed outcomes.
#[derive(Debug, Clone)]
pub struct ObservedExperiment {
    frame: ExperimentFrame,
    z: Assignment,
    y: Vec<f64>,
    inverse_mode: InverseMode,
}

impl ObservedExperiment {
    pub fn new(frame: ExperimentFrame, z: Assignment, y: Vec<f64>) -> Result<Self> {
        if frame.n() != z.n() || z.n() != y.len() {
            return Err(Error::arg(format!(
                "frame has {} rows, assignment {} units, outcome {} values",
                frame.n(),
                z.n(),
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("outcome {i} is not finite")));
        }
        Ok(Self { frame, z, y, inverse_mode: InverseMode::Strict })
    }

    /// Inverse mode for `S²_{X^rr}` in the `R²` and `s²_{τ|X}` terms.
    pub fn with_inverse_mode(mut self, mode: InverseMode) -> Self {
        self.inverse_mode = mode;
        self
    }

    pub fn frame(&self) -> &ExperimentFrame {
        &self.frame
    }

    pub fn assignment(&self) -> &Assignment {
        &self.z
    }

    pub fn z(&self) -> &[bool] {
        self.z.z()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Same covariates and outcomes under another assignment.
    pub fn reassign(&self, z: Assignment) -> Result<Self> {
        let mut out = Self::new(self.frame.clone(), z, self.y.clone())?;
        out.inverse_mode = self.inverse_mode;
        Ok(out)
    }

    pub fn inverse_mode(&self) -> InverseMode {
        self.inverse_mode
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    D,
    L,
    #[serde(rename = "DR")]
    Dr,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::D => "D",
            Method::L => "L",
            Method::Dr => "DR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D" => Ok(Method::D),
            "L" => Ok(Method::L),
            "DR" => Ok(Method::Dr),
            _ => Err(Error::arg(format!("unknown method {s:?} (expected D, L or DR)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    /// Mixture quantile `ν_{1−α/2}` used for the half-width.
    pub quantile: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// `R̂²` before clamping to [0, 1].
    pub r2_raw: f64,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub rank_deficient: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjustment_columns: Option<Vec<usize>>,
    /// Units whose estimated response probability was clipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_responses: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Point estimate with its variance, `R²` and optional interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub tau_hat: f64,
    pub v_hat: f64,
    pub r2_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<Interval>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    pub fn std_error(&self) -> f64 {
        (self.v_hat.max(0.0) / self.diagnostics.n as f64).sqrt()
    }

    /// Two-sided p-value of `τ = 0` against the normal reference.
    pub fn normal_pvalue(&self) -> f64 {
        let se = self.std_error();
        if se > 0.0 {
            two_sided_normal_pvalue(self.tau_hat / se)
        } else if self.tau_hat == 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Estimated influence values of the doubly robust estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifTable {
    pub eif1: Vec<f64>,
    pub eif0: Vec<f64>,
    pub eif: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub fold: Vec<usize>,
    pub pi: f64,
    pub c_hat: Vec<f64>,
}

fn clamp_unit(r: f64) -> f64 {
    if r.is_nan() {
        0.0
    } else {
        r.clamp(0.0, 1.0)
    }
}

fn base_diagnostics(z: &Assignment) -> Diagnostics {
    let mut d = Diagnostics { n: z.n(), n1: z.n1(), n0: z.n0(), ..Default::default() };
    if z.n1() != z.n0() {
        d.notes.push("unequal arms: exact finite-sample symmetry arguments need n1 = n0".into());
    }
    d
}

/// `S²_{X^rr}` inverse and the design-stage covariates.
struct RrContext {
    x: DMatrix<f64>,
    mean: DVector<f64>,
    inv: CovInverse,
}

impl RrContext {
    fn new(exp: &ObservedExperiment) -> Result<Self> {
        let x = exp.frame.rr_matrix();
        let m = matrix_moments(&x)?;
        let inv = CovInverse::new(&m.cov_xx, exp.inverse_mode)?;
        Ok(Self { x, mean: m.mean_x, inv })
    }

    /// `Σ_z (n/n_z) s²_{v(z)|X} − s²_{τ|X}` for per-unit values `v` read
    /// within each arm.
    fn explained(&self, arms: &ArmMoments, n: usize) -> f64 {
        let (w1, w0) = (n as f64 / arms.treated.n as f64, n as f64 / arms.control.n as f64);
        let diff: Vec<f64> = arms.treated.cov_yx.iter().zip(&arms.control.cov_yx).map(|(a, b)| a - b).collect();
        w1 * self.inv.quad_form(&arms.treated.cov_yx) + w0 * self.inv.quad_form(&arms.control.cov_yx) - self.inv.quad_form(&diff)
    }
}

/// Difference in means `ȳ₁ − ȳ₀`.
pub fn tau_d(exp: &ObservedExperiment) -> Result<EstimateReport> {
    let ctx = RrContext::new(exp)?;
    let arms = arm_moments(&ctx.x, &exp.y, exp.z())?;
    let n = exp.n();
    let tau_hat = arms.treated.mean_y - arms.control.mean_y;
    let w1 = n as f64 / arms.treated.n as f64;
    let w0 = n as f64 / arms.control.n as f64;
    let tau_proj = {
        let diff: Vec<f64> = arms.treated.cov_yx.iter().zip(&arms.control.cov_yx).map(|(a, b)| a - b).collect();
        ctx.inv.quad_form(&diff)
    };
    let v_hat = w1 * arms.treated.var_y + w0 * arms.control.var_y - tau_proj;
    let explained = ctx.explained(&arms, n);
    let r2_raw = if v_hat > 0.0 { explained / v_hat } else { 0.0 };
    let mut diagnostics = base_diagnostics(&exp.z);
    diagnostics.r2_raw = r2_raw;
    diagnostics.rank_deficient = ctx.inv.rank_deficient();
    Ok(EstimateReport { method: Method::D, tau_hat, v_hat, r2_hat: clamp_unit(r2_raw), ci: None, diagnostics })
}

/// Arm-wise least squares on `X^adj`, averaged over all units.
pub fn tau_l(exp: &ObservedExperiment) -> Result<EstimateReport> {
    let adj = exp.frame.adj_matrix();
    let ctx = RrContext::new(exp)?;
    let mut rep = linear_adjusted(&adj, &exp.y, &exp.z, Some(&ctx))?;
    rep.diagnostics.adjustment_columns = Some(exp.frame.adj_cols().to_vec());
    Ok(rep)
}

/// Core of `τ̂_L` for an explicit adjustment matrix. Without a design-stage
/// context the `R²` is left at zero.
fn linear_adjusted(adj: &DMatrix<f64>, y: &[f64], z: &Assignment, ctx: Option<&RrContext>) -> Result<EstimateReport> {
    let n = y.len();
    let zs = z.z();
    let treated: Vec<usize> = (0..n).filter(|&i| zs[i]).collect();
    let control: Vec<usize> = (0..n).filter(|&i| !zs[i]).collect();
    let fit_arm = |rows: &[usize]| {
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        fit_ols(&take_rows(adj, rows), &ys)
    };
    let fit1 = fit_arm(&treated)?;
    let fit0 = fit_arm(&control)?;
    let p = adj.ncols();
    let mut resid = vec![0.0; n];
    for i in 0..n {
        let fit = if zs[i] { &fit1 } else { &fit0 };
        resid[i] = y[i] - fit.predict_row((0..p).map(|j| adj[(i, j)]));
    }
    // mean of μ̂₁ − μ̂₀ over all units, written through the covariate means
    let tau_hat = fit1.intercept - fit0.intercept
        + (0..p).map(|j| (fit1.coef[j] - fit0.coef[j]) * adj.column(j).sum() / n as f64).sum::<f64>();

    let w1 = n as f64 / treated.len() as f64;
    let w0 = n as f64 / control.len() as f64;
    // s²_{τ(β)|X^adj}; zero up to rounding because least-squares residuals
    // are orthogonal to the regressors within each arm.
    let tau_adj = if p == 0 {
        0.0
    } else {
        let m = matrix_moments(adj)?;
        let inv = CovInverse::new(&m.cov_xx, InverseMode::PseudoInverse)?;
        let arms = arm_moments(adj, &resid, zs)?;
        let diff: Vec<f64> = arms.treated.cov_yx.iter().zip(&arms.control.cov_yx).map(|(a, b)| a - b).collect();
        inv.quad_form(&diff)
    };
    let var = |rows: &[usize]| {
        let m = rows.len() as f64;
        let mean = rows.iter().map(|&i| resid[i]).sum::<f64>() / m;
        rows.iter().map(|&i| (resid[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)
    };
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::arg("each arm needs at least two units"));
    }
    let v_hat = w1 * var(&treated) + w0 * var(&control) - tau_adj;

    let mut diagnostics = base_diagnostics(z);
    diagnostics.rank_deficient = fit1.rank_deficient || fit0.rank_deficient;
    if diagnostics.rank_deficient {
        diagnostics.notes.push("rank-deficient arm regression: minimum-norm fit used".into());
    }
    let r2_raw = match ctx {
        Some(ctx) => {
            let arms = arm_moments(&ctx.x, &resid, zs)?;
            let explained = ctx.explained(&arms, n);
            diagnostics.rank_deficient |= ctx.inv.rank_deficient();
            if v_hat > 0.0 {
                explained / v_hat
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    diagnostics.r2_raw = r2_raw;
    Ok(EstimateReport { method: Method::L, tau_hat, v_hat, r2_hat: clamp_unit(r2_raw), ci: None, diagnostics })
}

/// Per-unit outcome availability and response weights for the doubly robust
/// core. `None` means every outcome is observed.
pub(crate) struct ResponseWeights<'a> {
    pub observed: &'a [bool],
    /// Learner for `Ê(R | X)`, fit per arm on the training folds.
    pub learner: &'a dyn Learner,
}

/// Cross-fitted doubly robust estimator with `K` arm-stratified folds
/// drawn from `seed`.
pub fn tau_dr(exp: &ObservedExperiment, spec: &OutcomeModelSpec, k: usize, seed: u64) -> Result<(EstimateReport, EifTable)> {
    let plan = make_folds(&exp.z, k, &mut stream(seed, Purpose::Folds, 0))?;
    let cols = resolve_columns(exp, &spec.columns, &plan)?;
    tau_dr_with_plan(exp, spec, &cols, &plan, seed)
}

/// Adjustment columns for a model spec; stepwise selection runs on the
/// arm-centred observed outcomes with the estimator's folds.
pub fn resolve_columns(exp: &ObservedExperiment, choice: &ColumnChoice, plan: &FoldPlan) -> Result<Vec<usize>> {
    match choice {
        ColumnChoice::Adjustment => Ok(exp.frame.adj_cols().to_vec()),
        ColumnChoice::Columns(c) => {
            if let Some(&bad) = c.iter().find(|&&j| j >= exp.frame.k()) {
                return Err(Error::arg(format!("model column {bad} out of range")));
            }
            Ok(c.clone())
        }
        ColumnChoice::Stepwise => {
            let adj = exp.frame.adj_cols();
            let x = exp.frame.select(adj);
            let centred = arm_centred(&exp.y, exp.z());
            Ok(stepwise_select(&x, &centred, plan)?.into_iter().map(|j| adj[j]).collect())
        }
    }
}

fn arm_centred(y: &[f64], z: &[bool]) -> Vec<f64> {
    let mean = |arm: bool| {
        let v: Vec<f64> = y.iter().zip(z).filter(|(_, &zi)| zi == arm).map(|(v, _)| *v).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (m1, m0) = (mean(true), mean(false));
    y.iter().zip(z).map(|(v, &zi)| v - if zi { m1 } else { m0 }).collect()
}

/// Doubly robust estimate on a given fold plan with a pluggable learner.
pub fn tau_dr_with_plan<L: Learner + ?Sized>(
    exp: &ObservedExperiment,
    learner: &L,
    cols: &[usize],
    plan: &FoldPlan,
    seed: u64,
) -> Result<(EstimateReport, EifTable)> {
    if plan.k() < 2 {
        return Err(Error::Fold("cross-fitting needs at least two folds".into()));
    }
    dr_core(exp, learner, cols, plan, seed, true, None)
}

/// Single fit on all data, no cross-fitting. Only for oracle comparisons.
#[cfg(test)]
pub(crate) fn tau_dr_no_crossfit<L: Learner + ?Sized>(
    exp: &ObservedExperiment,
    learner: &L,
    cols: &[usize],
    seed: u64,
) -> Result<(EstimateReport, EifTable)> {
    dr_core(exp, learner, cols, &FoldPlan::single(exp.n()), seed, false, None)
}

pub(crate) fn dr_core<L: Learner + ?Sized>(
    exp: &ObservedExperiment,
    learner: &L,
    cols: &[usize],
    plan: &FoldPlan,
    seed: u64,
    cross_fit: bool,
    response: Option<&ResponseWeights<'_>>,
) -> Result<(EstimateReport, EifTable)> {
    let n = exp.n();
    if plan.fold_of_unit().len() != n {
        return Err(Error::Fold("fold plan does not match the number of units".into()));
    }
    let zs = exp.z();
    let x = exp.frame.select(cols);
    let y = &exp.y;
    let pi1 = exp.z.n1() as f64 / n as f64;
    let pi0 = exp.z.n0() as f64 / n as f64;
    let observed = |i: usize| response.is_none_or(|r| r.observed[i]);

    let mut mu = [vec![0.0; n], vec![0.0; n]];
    let mut weight = [vec![1.0; n], vec![1.0; n]];
    let mut clipped = 0usize;
    for f in 0..plan.k() {
        let members = plan.members(f);
        if members.is_empty() {
            continue;
        }
        let pool = if cross_fit { plan.complement(f) } else { (0..n).collect() };
        let xm = take_rows(&x, &members);
        for (a, arm) in [(0usize, false), (1usize, true)] {
            let in_arm: Vec<usize> = pool.iter().copied().filter(|&i| zs[i] == arm).collect();
            let train: Vec<usize> = in_arm.iter().copied().filter(|&i| observed(i)).collect();
            if train.len() < 2 {
                return Err(Error::Fold(format!("fold {f}: fewer than two training units in arm {a}")));
            }
            let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = learner
                .fit(&take_rows(&x, &train), &ty, derive_seed(seed, (f * 2 + a) as u64))
                .map_err(|e| Error::Numerical(format!("fold {f}, arm {a}: outcome model fit failed: {e}")))?;
            for (&i, p) in members.iter().zip(model.predict(&xm)) {
                mu[a][i] = p;
            }
            if let Some(r) = response {
                let rr: Vec<f64> = in_arm.iter().map(|&i| if r.observed[i] { 1.0 } else { 0.0 }).collect();
                let model = r
                    .learner
                    .fit(&take_rows(&x, &in_arm), &rr, derive_seed(seed, (1000 + f * 2 + a) as u64))
                    .map_err(|e| Error::Numerical(format!("fold {f}, arm {a}: response model fit failed: {e}")))?;
                for (&i, p) in members.iter().zip(model.predict(&xm)) {
                    let c = p.clamp(crate::missing::MIN_RESPONSE_PROB, 1.0);
                    if c != p {
                        clipped += 1;
                    }
                    weight[a][i] = c;
                }
            }
        }
    }

    let mut eta1 = vec![0.0; n];
    let mut eta0 = vec![0.0; n];
    for i in 0..n {
        let (r1, r0) = if observed(i) { (y[i] - mu[1][i], y[i] - mu[0][i]) } else { (0.0, 0.0) };
        let obs = if observed(i) { 1.0 } else { 0.0 };
        eta1[i] = if zs[i] { obs / (pi1 * weight[1][i]) * r1 } else { 0.0 } + mu[1][i];
        eta0[i] = if zs[i] { 0.0 } else { obs / (pi0 * weight[0][i]) * r0 } + mu[0][i];
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (bar1, bar0) = (mean(&eta1), mean(&eta0));
    let tau_hat = (0..n).map(|i| eta1[i] - eta0[i]).sum::<f64>() / n as f64;
    let eif1: Vec<f64> = eta1.iter().map(|v| v - bar1).collect();
    let eif0: Vec<f64> = eta0.iter().map(|v| v - bar0).collect();
    let eif: Vec<f64> = eif1.iter().zip(&eif0).map(|(a, b)| a - b).collect();

    let ctx = RrContext::new(exp)?;
    let d = ctx.x.ncols();
    let mut v_hat = 0.0;
    let mut c_hat = vec![0.0; d];
    let mut used = 0;
    for f in 0..plan.k() {
        let members = plan.members(f);
        if members.is_empty() {
            continue;
        }
        used += 1;
        let m = members.len() as f64;
        v_hat += members.iter().map(|&i| eif[i] * eif[i]).sum::<f64>() / m;
        for &i in &members {
            let s = (if zs[i] { 1.0 } else { 0.0 } - pi1) / (pi1 * pi0) * eif[i] / m;
            for (j, c) in c_hat.iter_mut().enumerate() {
                *c += s * (ctx.x[(i, j)] - ctx.mean[j]);
            }
        }
    }
    v_hat /= used as f64;
    c_hat.iter_mut().for_each(|c| *c /= used as f64);
    // (nΣ̂)⁻¹ = π(1−π)·(S²_X)⁻¹
    let r2_raw = if v_hat > 0.0 { pi1 * pi0 * ctx.inv.quad_form(&c_hat) / v_hat } else { 0.0 };

    let mut diagnostics = base_diagnostics(&exp.z);
    diagnostics.r2_raw = r2_raw;
    diagnostics.rank_deficient = ctx.inv.rank_deficient();
    diagnostics.folds = Some(plan.k());
    diagnostics.model = Some(learner.name());
    diagnostics.adjustment_columns = Some(cols.to_vec());
    if response.is_some() {
        diagnostics.clipped_responses = Some(clipped);
    }
    let report = EstimateReport { method: Method::Dr, tau_hat, v_hat, r2_hat: clamp_unit(r2_raw), ci: None, diagnostics };
    let table = EifTable {
        eif1,
        eif0,
        eif,
        mu1: mu[1].clone(),
        mu0: mu[0].clone(),
        fold: plan.fold_of_unit().to_vec(),
        pi: pi1,
        c_hat,
    };
    Ok((report, table))
}

/// Mean squared difference between two replication-indexed estimate lists.
pub fn coherence_stat(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("estimate lists differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::arg("coherence needs at least two replications"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhackResult {
    /// Smallest two-sided p-value over all adjustment subsets.
    pub p_min: f64,
    /// Frame column indices of the minimising subset.
    pub subset: Vec<usize>,
    /// Whether `p_min < alpha`.
    pub rejects: bool,
    pub subsets_tried: usize,
}

/// Minimum over every subset of `X^adj` of the normal-reference p-value of
/// `τ̂_L` adjusted for that subset.
pub fn phack_min_pvalue(exp: &ObservedExperiment, alpha: f64) -> Result<PhackResult> {
    let adj = exp.frame.adj_cols();
    let p = adj.len();
    if p > MAX_PHACK_COLUMNS {
        return Err(Error::arg(format!(
            "{p} adjustment columns means 2^{p} regressions; pass at most {MAX_PHACK_COLUMNS} columns explicitly"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let full = exp.frame.select(adj);
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|&j| mask & (1 << j) != 0).collect();
        let x = full.select_columns(idx.iter());
        let rep = linear_adjusted(&x, &exp.y, &exp.z, None)?;
        let pv = rep.normal_pvalue();
        if pv < best.0 {
            best = (pv, idx.iter().map(|&j| adj[j]).collect());
        }
    }
    Ok(PhackResult { p_min: best.0, subset: best.1, rejects: best.0 < alpha, subsets_tried: 1 << p })
}

/// Dispatch helper used by the harness, CLI and randomization test.
pub fn estimate(exp: &ObservedExperiment, method: Method, model: &OutcomeModelSpec, k: usize, seed: u64) -> Result<EstimateReport> {
    match method {
        Method::D => tau_d(exp),
        Method::L => tau_l(exp),
        Method::Dr => Ok(tau_dr(exp, model, k, seed)?.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, OutcomeModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fixture(n: usize, d: usize, seed: u64) -> ObservedExperiment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut z: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
        for i in (1..n).rev() {
            z.swap(i, rng.random_range(0..=i));
        }
        let y = (0..n)
            .map(|i| {
                let s: f64 = (0..d).map(|j| x[(i, j)] * (j as f64 + 1.0) / d as f64).sum();
                s + x[(i, 0)].powi(2) * 0.3 + if z[i] { 1.0 + 0.5 * x[(i, 0)] } else { 0.0 } + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        ObservedExperiment::new(ExperimentFrame::from_matrix(x).unwrap(), Assignment::new(z).unwrap(), y).unwrap()
    }

    #[test]
    fn two_unit_difference() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 4.0]);
        let f = ExperimentFrame::from_matrix(x).unwrap();
        let z = Assignment::new(vec![true, true, false, false]).unwrap();
        let exp = ObservedExperiment::new(f, z, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(tau_d(&exp).unwrap().tau_hat, 1.0);
    }

    #[test]
    fn constant_outcome() {
        let exp = fixture(20, 2, 1);
        let exp = ObservedExperiment::new(exp.frame.clone(), exp.z.clone(), vec![3.0; 20]).unwrap();
        let r = tau_d(&exp).unwrap();
        assert_eq!(r.tau_hat, 0.0);
        assert!(r.v_hat.abs() < 1e-20);
        assert_eq!(r.r2_hat, 0.0);
    }

    /// `v_hat` of the difference in means from the definition, with an
    /// explicit inverse of `S²_X`.
    #[test]
    fn difference_in_means_variance_oracle() {
        let exp = fixture(60, 3, 2);
        let r = tau_d(&exp).unwrap();
        let x = exp.frame.rr_matrix();
        let n = 60.0;
        let z = exp.z();
        let arm = |a: bool| -> (f64, f64, Vec<f64>) {
            let idx: Vec<usize> = (0..60).filter(|&i| z[i] == a).collect();
            let m = idx.len() as f64;
            let my = idx.iter().map(|&i| exp.y[i]).sum::<f64>() / m;
            let vy = idx.iter().map(|&i| (exp.y[i] - my).powi(2)).sum::<f64>() / (m - 1.0);
            let c = (0..3)
                .map(|j| {
                    let mx = idx.iter().map(|&i| x[(i, j)]).sum::<f64>() / m;
                    idx.iter().map(|&i| (exp.y[i] - my) * (x[(i, j)] - mx)).sum::<f64>() / (m - 1.0)
                })
                .collect();
            (m, vy, c)
        };
        let (m1, v1, c1) = arm(true);
        let (m0, v0, c0) = arm(false);
        let s = matrix_moments(&x).unwrap().cov_xx.try_inverse().unwrap();
        let q = |a: &[f64], b: &[f64]| (DVector::from_column_slice(a).transpose() * &s * DVector::from_column_slice(b))[0];
        let diff: Vec<f64> = c1.iter().zip(&c0).map(|(a, b)| a - b).collect();
        let v = n / m1 * v1 + n / m0 * v0 - q(&diff, &diff);
        assert_relative_eq!(r.v_hat, v, epsilon = 1e-10);
        let expl = n / m1 * q(&c1, &c1) + n / m0 * q(&c0, &c0) - q(&diff, &diff);
        assert_relative_eq!(r.diagnostics.r2_raw, expl / v, epsilon = 1e-10);
    }

    /// Coefficient of z in y ~ 1 + z + X̃ + z·X̃ with X̃ centred.
    fn interacted_coefficient(exp: &ObservedExperiment) -> f64 {
        let x = exp.frame.adj_matrix();
        let (n, p) = x.shape();
        let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
        let design = DMatrix::from_fn(n, 2 + 2 * p, |i, j| {
            let zi = if exp.z()[i] { 1.0 } else { 0.0 };
            match j {
                0 => 1.0,
                1 => zi,
                j if j < 2 + p => x[(i, j - 2)] - means[j - 2],
                j => zi * (x[(i, j - 2 - p)] - means[j - 2 - p]),
            }
        });
        let xtx = design.tr_mul(&design);
        xtx.lu().solve(&design.tr_mul(&DVector::from_column_slice(&exp.y))).unwrap()[1]
    }

    #[test]
    fn linear_adjustment_equals_interacted_regression() {
        for seed in 0..10 {
            let exp = fixture(50, 3, seed);
            assert_relative_eq!(tau_l(&exp).unwrap().tau_hat, interacted_coefficient(&exp), epsilon = 1e-8);
        }
    }

    #[test]
    fn exact_linear_model_recovered() {
        let exp = fixture(40, 3, 3);
        let x = exp.frame.adj_matrix();
        let y: Vec<f64> = (0..40).map(|i| 2.0 * x[(i, 0)] - x[(i, 2)] + if exp.z()[i] { 1.0 } else { 0.0 }).collect();
        let exp = ObservedExperiment::new(exp.frame.clone(), exp.z.clone(), y).unwrap();
        assert!((tau_l(&exp).unwrap().tau_hat - 1.0).abs() < 1e-10);
    }

    #[test]
    fn empty_adjustment_reduces_to_difference_in_means() {
        let exp = fixture(30, 2, 4);
        let frame = exp.frame.with_columns(vec![0, 1], vec![]).unwrap();
        let exp = ObservedExperiment::new(frame, exp.z.clone(), exp.y.clone()).unwrap();
        assert_eq!(tau_l(&exp).unwrap().tau_hat, tau_d(&exp).unwrap().tau_hat);
    }

    #[test]
    fn linear_variance_uses_residual_variances() {
        let exp = fixture(80, 2, 5);
        let r = tau_l(&exp).unwrap();
        let x = exp.frame.adj_matrix();
        let z = exp.z();
        let mut v = 0.0;
        for arm in [true, false] {
            let idx: Vec<usize> = (0..80).filter(|&i| z[i] == arm).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| exp.y[i]).collect();
            let fit = fit_ols(&take_rows(&x, &idx), &ys).unwrap();
            let pred = fit.predict(&take_rows(&x, &idx));
            let e: Vec<f64> = ys.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let m = e.len() as f64;
            let me = e.iter().sum::<f64>() / m;
            v += 80.0 / m * e.iter().map(|r| (r - me).powi(2)).sum::<f64>() / (m - 1.0);
        }
        assert_relative_eq!(r.v_hat, v, epsilon = 1e-9);
    }

    struct Truth(Vec<f64>);
    impl OutcomeModel for Truth {
        fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
            (0..x.nrows()).map(|i| self.0[0] + self.0[1] * x[(i, 0)]).collect()
        }
    }
    /// Returns `μ_z` exactly; the arm is recognised from the training data.
    struct Oracle;
    impl Learner for Oracle {
        fn fit(&self, x: &DMatrix<f64>, y: &[f64], _seed: u64) -> Result<Box<dyn OutcomeModel>> {
            let shift = y[0] - 2.0 * x[(0, 0)];
            Ok(Box::new(Truth(vec![shift, 2.0])))
        }
        fn name(&self) -> String {
            "oracle".into()
        }
    }

    #[test]
    fn oracle_model_without_noise_is_exact() {
        let base = fixture(40, 1, 6);
        let x = base.frame.adj_matrix();
        let y: Vec<f64> = (0..40).map(|i| 2.0 * x[(i, 0)] + if base.z()[i] { 1.0 } else { 0.0 }).collect();
        let exp = ObservedExperiment::new(base.frame.clone(), base.z.clone(), y).unwrap();
        let (r, _) = tau_dr_with_plan(&exp, &Oracle, &[0], &make_folds(&exp.z, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), 0).unwrap();
        assert!((r.tau_hat - 1.0).abs() < 1e-12);
    }

    /// Direct AIPW formula with one OLS fit per arm on all data.
    #[test]
    fn no_crossfit_matches_aipw_oracle() {
        let exp = fixture(20, 2, 7);
        let (r, t) = tau_dr_no_crossfit(&exp, &ModelKind::Ols, &[0, 1], 0).unwrap();
        let x = exp.frame.select(&[0, 1]);
        let z = exp.z();
        let fit_arm = |a: bool| {
            let idx: Vec<usize> = (0..20).filter(|&i| z[i] == a).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| exp.y[i]).collect();
            fit_ols(&take_rows(&x, &idx), &ys).unwrap()
        };
        let (f1, f0) = (fit_arm(true), fit_arm(false));
        let pi = 0.5;
        let mut tau = 0.0;
        let mut e1 = [0.0; 20];
        let mut e0 = [0.0; 20];
        for i in 0..20 {
            let row = || (0..2).map(|j| x[(i, j)]);
            let (m1, m0) = (f1.predict_row(row()), f0.predict_row(row()));
            let zi = if z[i] { 1.0 } else { 0.0 };
            e1[i] = zi / pi * (exp.y[i] - m1) + m1;
            e0[i] = (1.0 - zi) / (1.0 - pi) * (exp.y[i] - m0) + m0;
            tau += (e1[i] - e0[i]) / 20.0;
        }
        assert_relative_eq!(r.tau_hat, tau, epsilon = 1e-10);
        let b1 = e1.iter().sum::<f64>() / 20.0;
        let b0 = e0.iter().sum::<f64>() / 20.0;
        let v = (0..20).map(|i| ((e1[i] - b1) - (e0[i] - b0)).powi(2)).sum::<f64>() / 20.0;
        assert_relative_eq!(r.v_hat, v, epsilon = 1e-10);
        assert_relative_eq!(t.eif[3], (e1[3] - b1) - (e0[3] - b0), epsilon = 1e-10);
    }

    /// `Ĉ` and `R̂²_DR` from the definition for a two-fold plan.
    #[test]
    fn dr_r2_matches_definition() {
        let exp = fixture(40, 2, 8);
        let plan = make_folds(&exp.z, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (r, t) = tau_dr_with_plan(&exp, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap();
        let x = exp.frame.rr_matrix();
        let m = matrix_moments(&x).unwrap();
        let mut c = DVector::zeros(2);
        for f in 0..2 {
            let mem = plan.members(f);
            for &i in &mem {
                let zi = if exp.z()[i] { 1.0 } else { 0.0 };
                let w = (zi - 0.5) / 0.25 * t.eif[i] / mem.len() as f64 / 2.0;
                c += DVector::from_fn(2, |j, _| w * (x[(i, j)] - m.mean_x[j]));
            }
        }
        let sigma_n = &m.cov_xx * (40.0 * 40.0 / (20.0 * 20.0));
        let q = (c.transpose() * sigma_n.try_inverse().unwrap() * &c)[0];
        assert_relative_eq!(r.diagnostics.r2_raw, q / r.v_hat, epsilon = 1e-10);
        assert_relative_eq!(t.c_hat[1], c[1], epsilon = 1e-12);
    }

    #[test]
    fn cross_fitting_isolates_folds() {
        let exp = fixture(40, 2, 9);
        let plan = make_folds(&exp.z, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (_, t) = tau_dr_with_plan(&exp, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap();
        let mut y = exp.y.clone();
        for i in plan.members(0) {
            y[i] += 100.0;
        }
        let tainted = ObservedExperiment::new(exp.frame.clone(), exp.z.clone(), y).unwrap();
        let (_, t2) = tau_dr_with_plan(&tainted, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap();
        for i in plan.members(0) {
            assert_eq!(t.mu1[i], t2.mu1[i]);
            assert_eq!(t.mu0[i], t2.mu0[i]);
        }
    }

    #[test]
    fn forest_dr_is_seed_deterministic() {
        let exp = fixture(60, 3, 10);
        let a = tau_dr(&exp, &OutcomeModelSpec::forest(1), 2, 5).unwrap().0;
        let b = tau_dr(&exp, &OutcomeModelSpec::forest(1), 2, 5).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn coherence_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(coherence_stat(&a, &a).unwrap(), 0.0);
        let b = [1.5, 2.5, 3.5];
        assert!((coherence_stat(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(coherence_stat(&a, &b[..2]).is_err());
    }

    #[test]
    fn phack_with_no_columns_is_unadjusted() {
        let exp = fixture(30, 2, 11);
        let frame = exp.frame.with_columns(vec![0, 1], vec![]).unwrap();
        let exp = ObservedExperiment::new(frame, exp.z.clone(), exp.y.clone()).unwrap();
        let r = phack_min_pvalue(&exp, 0.05).unwrap();
        assert_eq!(r.p_min, tau_l(&exp).unwrap().normal_pvalue());
        assert_eq!(r.subsets_tried, 1);
    }

    #[test]
    fn phack_matches_four_subset_enumeration() {
        let exp = fixture(40, 2, 12);
        let r = phack_min_pvalue(&exp, 0.05).unwrap();
        let mut best = f64::INFINITY;
        for adj in [vec![], vec![0], vec![1], vec![0, 1]] {
            let f = exp.frame.with_columns(vec![0, 1], adj).unwrap();
            let e = ObservedExperiment::new(f, exp.z.clone(), exp.y.clone()).unwrap();
            best = best.min(tau_l(&e).unwrap().normal_pvalue());
        }
        assert_relative_eq!(r.p_min, best, epsilon = 1e-14);
    }

    #[test]
    fn phack_ignores_duplicate_column() {
        let exp = fixture(40, 2, 13);
        let base = phack_min_pvalue(&exp, 0.05).unwrap().p_min;
        let x = exp.frame.covariates();
        let x3 = DMatrix::from_fn(40, 3, |i, j| x[(i, j.min(1))]);
        let f = ExperimentFrame::from_matrix(x3).unwrap().with_columns(vec![0, 1], vec![0, 1, 2]).unwrap();
        let e = ObservedExperiment::new(f, exp.z.clone(), exp.y.clone()).unwrap();
        assert_relative_eq!(phack_min_pvalue(&e, 0.05).unwrap().p_min, base, epsilon = 1e-8);
    }

    #[test]
    fn phack_guard() {
        let exp = fixture(60, 13, 14);
        assert!(phack_min_pvalue(&exp, 0.05).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn relabelling_arms_negates_estimates(seed in 0u64..1000) {
            let exp = fixture(30, 2, seed);
            let flipped = exp.reassign(exp.z.mirror()).unwrap();
            prop_assert_eq!(tau_d(&flipped).unwrap().tau_hat, -tau_d(&exp).unwrap().tau_hat);
            prop_assert!((tau_l(&flipped).unwrap().tau_hat + tau_l(&exp).unwrap().tau_hat).abs() < 1e-12);
            let plan = make_folds(&exp.z, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let a = tau_dr_with_plan(&exp, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap().0.tau_hat;
            let b = tau_dr_with_plan(&flipped, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap().0.tau_hat;
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn location_and_scale_equivariance(seed in 0u64..1000, c in -50.0f64..50.0, s in 0.1f64..10.0) {
            let exp = fixture(30, 2, seed);
            let shifted = ObservedExperiment::new(exp.frame.clone(), exp.z.clone(), exp.y.iter().map(|v| s * v + c).collect()).unwrap();
            let plan = make_folds(&exp.z, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let pairs = [
                (tau_d(&exp).unwrap(), tau_d(&shifted).unwrap()),
                (tau_l(&exp).unwrap(), tau_l(&shifted).unwrap()),
                (
                    tau_dr_with_plan(&exp, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap().0,
                    tau_dr_with_plan(&shifted, &ModelKind::Ols, &[0, 1], &plan, 0).unwrap().0,
                ),
            ];
            for (a, b) in pairs {
                prop_assert!((b.tau_hat - s * a.tau_hat).abs() < 1e-8 * (1.0 + c.abs() + s));
                prop_assert!((b.v_hat - s * s * a.v_hat).abs() < 1e-8 * s * s * (1.0 + a.v_hat));
                prop_assert!(b.r2_hat >= 0.0 && b.r2_hat <= 1.0);
            }
        }
    }
}
