//! Asymptotic inference after rerandomization: the truncated component
//! `L_{d,a}`, the normal/truncated-normal mixture and its quantiles,
//! confidence intervals, and the randomization test.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{complete_randomization, sample_acceptable_batch};
use crate::balance::{Assignment, BalanceCriterion};
use crate::distributions::{chisq_cdf, normal_quantile};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateReport, Interval, Method, ObservedExperiment};
use crate::models::OutcomeModelSpec;
use crate::rng::{stream, Purpose, StreamRng};

/// Draws generated from one random stream; fixed so that results do not
/// depend on how chunks are spread over workers.
const CHUNK: usize = 1 << 16;

/// Smallest null-distribution size; gives the p-value floor 0.01.
pub const MIN_NULL_DRAWS: usize = 99;

/// Largest expected number of proposals per truncated draw.
const MAX_EXPECTED_ATTEMPTS: f64 = 1e6;

/// `P(χ²_{d+2} ≤ a) / P(χ²_d ≤ a)`: the variance of `L_{d,a}`.
pub fn v_da(d: usize, a: f64) -> f64 {
    let den = chisq_cdf(d as f64, a);
    if den <= 0.0 {
        return 0.0;
    }
    (chisq_cdf(d as f64 + 2.0, a) / den).min(1.0)
}

/// Exact sampler for `χ²_d` truncated to `[0, a]`.
///
/// Two exact schemes are available and the one with the higher acceptance
/// rate is used: plain rejection from `χ²_d`, or proposing from the density
/// `∝ x^{d/2−1}` on `[0, a]` (`x = a·U^{2/d}`) and accepting with
/// probability `e^{−x/2}`. The second is what keeps small `a` cheap.
#[derive(Debug, Clone)]
pub struct TruncatedChiSquare {
    d: usize,
    a: f64,
    power_proposal: bool,
    gamma: Gamma<f64>,
    acceptance: f64,
}

impl TruncatedChiSquare {
    pub fn new(d: usize, a: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::arg("d must be at least 1"));
        }
        if !(a > 0.0) {
            return Err(Error::arg(format!("threshold must be positive, got {a}")));
        }
        let k = d as f64 / 2.0;
        let plain = chisq_cdf(d as f64, a);
        // acceptance of the power proposal: F_d(a)·Γ(k)·2^k / (a^k / k)
        let power = if a.is_finite() {
            (plain.ln() + statrs::function::gamma::ln_gamma(k) + k * std::f64::consts::LN_2 + k.ln() - k * a.ln()).exp()
        } else {
            0.0
        };
        let acceptance = plain.max(power);
        if !(acceptance * MAX_EXPECTED_ATTEMPTS >= 1.0) {
            return Err(Error::arg(format!(
                "truncated chi-square sampler would need more than {MAX_EXPECTED_ATTEMPTS:e} proposals per draw; use a larger threshold"
            )));
        }
        let gamma = Gamma::new(k, 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(Self { d, a, power_proposal: power > plain, gamma, acceptance })
    }

    /// Expected fraction of proposals accepted.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.power_proposal {
            let e = 2.0 / self.d as f64;
            loop {
                let u: f64 = rng.random();
                let x = self.a * u.powf(e);
                if rng.random::<f64>() < (-0.5 * x).exp() {
                    return x;
                }
            }
        } else {
            loop {
                let x = self.gamma.sample(rng);
                if x <= self.a {
                    return x;
                }
            }
        }
    }
}

/// Sampler for `L_{d,a} = χ_{d,a} · S · √β_d` with `β_d ~ Beta(1/2, (d−1)/2)`
/// (a point mass at one when `d = 1`).
#[derive(Debug, Clone)]
pub struct LdaSampler {
    chi: TruncatedChiSquare,
    beta: Option<Beta<f64>>,
}

impl LdaSampler {
    pub fn new(d: usize, a: f64) -> Result<Self> {
        let chi = TruncatedChiSquare::new(d, a)?;
        let beta = if d > 1 {
            Some(Beta::new(0.5, (d as f64 - 1.0) / 2.0).map_err(|e| Error::Numerical(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { chi, beta })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r = self.chi.sample(rng).sqrt();
        let b = self.beta.as_ref().map_or(1.0, |b| b.sample(rng));
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        r * s * b.sqrt()
    }
}

/// Fills `draws` values in parallel, chunk `c` from stream `(seed, purpose, c)`.
fn chunked<F>(draws: usize, seed: u64, purpose: Purpose, f: F) -> Vec<f64>
where
    F: Fn(&mut StreamRng) -> f64 + Sync,
{
    let mut out = vec![0.0; draws];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut rng = stream(seed, purpose, c as u64);
        for v in chunk.iter_mut() {
            *v = f(&mut rng);
        }
    });
    out
}

/// `draws` independent copies of `L_{d,a}`.
pub fn sample_l_da(d: usize, a: f64, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::arg("need at least one draw"));
    }
    let s = LdaSampler::new(d, a)?;
    Ok(chunked(draws, seed, Purpose::Mixture, |rng| s.sample(rng)))
}

/// Law `√(1−r²)·ε + √r²·L_{d,a}` with Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub d: usize,
    pub a: f64,
    pub r2: f64,
    pub draws: usize,
    pub seed: u64,
}

/// Paired `(ε, L)` draws reusable across `r²` values.
#[derive(Debug, Clone)]
pub struct MixtureDraws {
    eps: Vec<f64>,
    l: Vec<f64>,
}

impl MixtureDraws {
    pub fn new(d: usize, a: f64, draws: usize, seed: u64) -> Result<Self> {
        let l = sample_l_da(d, a, draws, seed)?;
        let eps = chunked(draws, seed, Purpose::Noise, |rng| rng.sample(StandardNormal));
        Ok(Self { eps, l })
    }

    /// Empirical `q`-quantile of the mixture. Each draw `W` is paired with
    /// `−W` (the law is symmetric), which halves the Monte Carlo variance.
    pub fn quantile(&self, r2: f64, q: f64) -> Result<f64> {
        check_r2(r2)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::arg(format!("quantile level must lie in (0, 1), got {q}")));
        }
        let (wn, wl) = ((1.0 - r2).sqrt(), r2.sqrt());
        let mut abs: Vec<f64> = self.eps.iter().zip(&self.l).map(|(e, l)| (wn * e + wl * l).abs()).collect();
        // q-quantile of {W, −W} = (2q − 1)-quantile of |W| for q > 1/2
        let level = (2.0 * q - 1.0).abs();
        let m = abs.len();
        let idx = ((level * m as f64).ceil() as usize).clamp(1, m) - 1;
        let (_, v, _) = abs.select_nth_unstable_by(idx, f64::total_cmp);
        let v = *v;
        Ok(if q >= 0.5 { v } else { -v })
    }
}

fn check_r2(r2: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r2) {
        return Err(Error::arg(format!("r2 must lie in [0, 1], got {r2}")));
    }
    Ok(())
}

/// `q`-quantile of the mixture in `spec`.
pub fn mixture_quantile(spec: &MixtureSpec, q: f64) -> Result<f64> {
    check_r2(spec.r2)?;
    if spec.r2 == 0.0 {
        // pure normal branch; no truncated draws needed
        let eps = chunked(spec.draws.max(1), spec.seed, Purpose::Noise, |rng| rng.sample(StandardNormal));
        let draws = MixtureDraws { l: vec![0.0; eps.len()], eps };
        return draws.quantile(0.0, q);
    }
    MixtureDraws::new(spec.d, spec.a, spec.draws, spec.seed)?.quantile(spec.r2, q)
}

/// Quantiles `ν_q(r²)` on an even `r²` grid, linearly interpolated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureTable {
    pub d: usize,
    pub a: f64,
    pub q: f64,
    values: Vec<f64>,
}

impl MixtureTable {
    pub fn build(d: usize, a: f64, q: f64, grid: usize, draws: usize, seed: u64) -> Result<Self> {
        if grid < 2 {
            return Err(Error::arg("grid needs at least two points"));
        }
        let mix = MixtureDraws::new(d, a, draws, seed)?;
        let values = (0..grid).map(|g| mix.quantile(g as f64 / (grid - 1) as f64, q)).collect::<Result<_>>()?;
        Ok(Self { d, a, q, values })
    }

    pub fn quantile(&self, r2: f64) -> f64 {
        let r2 = r2.clamp(0.0, 1.0);
        let pos = r2 * (self.values.len() - 1) as f64;
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let t = pos - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }
}

/// What the inference should assume about the design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignLaw {
    /// Complete randomization: normal reference.
    Complete,
    /// Mahalanobis rerandomization with `d` covariates and threshold `a`.
    Rerandomized { d: usize, a: f64 },
}

/// `τ̂ ± ν_{1−α/2}·√(v̂/n)` with `ν` from the mixture at `r̂²`.
pub fn confidence_interval(report: &EstimateReport, law: DesignLaw, alpha: f64, draws: usize, seed: u64) -> Result<Interval> {
    check_alpha(alpha)?;
    let q = 1.0 - alpha / 2.0;
    let nu = match law {
        DesignLaw::Complete => normal_quantile(q),
        DesignLaw::Rerandomized { d, a } => {
            mixture_quantile(&MixtureSpec { d, a, r2: report.r2_hat, draws, seed }, q)?
        }
    };
    interval_with_quantile(report, nu, alpha)
}

/// Interval for a precomputed quantile `ν`.
pub fn interval_with_quantile(report: &EstimateReport, nu: f64, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    let half = nu * report.std_error();
    Ok(Interval { lower: report.tau_hat - half, upper: report.tau_hat + half, alpha, quantile: nu })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// How draws whose `|T|` equals the observed `|T|` are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Count only `|T⁽ʲ⁾| > |T_obs|`.
    #[default]
    Strict,
    /// Count `|T⁽ʲ⁾| ≥ |T_obs|`; a statistic constant in `z` then gets `p = 1`.
    Inclusive,
}

/// Test statistic: one of the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub method: Method,
    #[serde(default = "OutcomeModelSpec::ols")]
    pub model: OutcomeModelSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    2
}

impl Statistic {
    pub fn new(method: Method) -> Self {
        Self { method, model: OutcomeModelSpec::ols(), folds: 2 }
    }

    fn eval(&self, exp: &ObservedExperiment, seed: u64) -> Result<f64> {
        Ok(estimate(exp, self.method, &self.model, self.folds, seed)?.tau_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub p_value: f64,
    pub observed_stat: f64,
    pub null_draws: usize,
    pub seed: u64,
    pub tie_rule: TieRule,
    /// Balance-metric evaluations spent generating the null draws.
    pub metric_evaluations: u64,
}

/// Randomization test of the sharp null `Y(1) = Y(0)`.
///
/// The observed outcomes are held fixed while `draws` assignments are
/// redrawn from the design (rejection sampling when `criterion` is given,
/// complete randomization otherwise); `p = (1 + #{|T⁽ʲ⁾| ⋗ |T_obs|})/(B+1)`.
pub fn randomization_test(
    exp: &ObservedExperiment,
    criterion: Option<&BalanceCriterion>,
    statistic: &Statistic,
    draws: usize,
    seed: u64,
    tie: TieRule,
) -> Result<TestResult> {
    if draws < MIN_NULL_DRAWS {
        return Err(Error::arg(format!("need at least {MIN_NULL_DRAWS} null draws, got {draws}")));
    }
    let n1 = exp.assignment().n1();
    let observed = statistic.eval(exp, seed)?;
    let (assignments, metric_evaluations): (Vec<Assignment>, u64) = match criterion {
        Some(c) => {
            let b = sample_acceptable_batch(c, n1, draws, seed, false, None)?;
            (b.assignments, b.metric_evaluations)
        }
        None => {
            let zs = (0..draws)
                .into_par_iter()
                .map(|j| complete_randomization(exp.n(), n1, &mut stream(seed, Purpose::NullDistribution, j as u64)))
                .collect::<Result<_>>()?;
            (zs, 0)
        }
    };
    let stats: Vec<f64> = assignments
        .into_par_iter()
        .enumerate()
        .map(|(j, z)| statistic.eval(&exp.reassign(z)?, crate::rng::derive_seed(seed, j as u64 + 1)))
        .collect::<Result<_>>()?;
    let t = observed.abs();
    let exceed = stats
        .iter()
        .filter(|s| match tie {
            TieRule::Strict => s.abs() > t,
            TieRule::Inclusive => s.abs() >= t,
        })
        .count();
    Ok(TestResult {
        p_value: (1 + exceed) as f64 / (draws + 1) as f64,
        observed_stat: observed,
        null_draws: draws,
        seed,
        tie_rule: tie,
        metric_evaluations,
    })
}
