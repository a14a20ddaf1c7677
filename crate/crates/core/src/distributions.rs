//! Chi-square and normal distribution functions.
//!
//! The regularized incomplete gamma function comes from `statrs` and `erfc`
//! from `libm`; quantiles are
//! solved here by safeguarded Newton iteration so that accuracy is controlled
//! locally rather than by a library default tolerance.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// `P(χ²_df ≤ x)`.
pub fn chisq_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(df / 2.0, x / 2.0)
    }
}

/// `P(χ²_df > x)`.
pub fn chisq_sf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(df / 2.0, x / 2.0)
    }
}

pub fn chisq_pdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = df / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// The `p`-quantile of `χ²_df`.
pub fn chisq_quantile(df: f64, p: f64) -> Result<f64> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::arg(format!("degrees of freedom must be positive, got {df}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::arg(format!("probability must lie in (0, 1), got {p}")));
    }

    // Wilson–Hilferty starting point.
    let z = normal_quantile(p);
    let h = 2.0 / (9.0 * df);
    let mut x = (df * (1.0 - h + z * h.sqrt()).powi(3)).max(f64::MIN_POSITIVE);
    if !x.is_finite() {
        x = df;
    }

    // Bracket the root.
    let mut lo = 0.0_f64;
    let mut hi = x.max(1.0);
    while chisq_cdf(df, hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("chi-square quantile bracket overflow".into()));
        }
    }
    if x <= lo || x >= hi {
        x = 0.5 * (lo + hi);
    }

    for _ in 0..200 {
        // Work with whichever tail is smaller to keep the residual accurate.
        let resid = if p < 0.5 {
            chisq_cdf(df, x) - p
        } else {
            (1.0 - p) - chisq_sf(df, x)
        };
        if resid > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = chisq_pdf(df, x);
        let mut next = if pdf > 0.0 { x - resid / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(f64::MIN_POSITIVE) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile; `p` must lie in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // `erfc_inv` is only good to ~1e-9 in places; polish with Halley steps.
    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf <= 0.0 {
            break;
        }
        let u = e / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Two-sided normal p-value for a z statistic.
pub fn two_sided_normal_pvalue(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integral of the density on [0, x]; the substitution
    /// x = t² removes the integrable singularity at zero for df = 1.
    fn integrated_cdf(df: f64, x: f64) -> f64 {
        let m = 20_000;
        let upper = x.sqrt();
        let h = upper / m as f64;
        let g = |t: f64| if t == 0.0 { if df == 1.0 { 2.0 * (2.0 * std::f64::consts::PI).sqrt().recip() } else { 0.0 } } else { 2.0 * t * chisq_pdf(df, t * t) };
        let mut s = g(0.0) + g(upper);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn median_of_chisq1_matches_integrated_cdf() {
        let a = chisq_quantile(1.0, 0.5).unwrap();
        assert!((integrated_cdf(1.0, a) - 0.5).abs() < 1e-6);
        // classical value
        assert!((a - 0.454_936_423_119_572_7).abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &df in &[1.0, 2.0, 6.0, 10.0, 60.0, 100.0] {
            for &p in &[1e-6, 0.001, 0.01, 0.3, 0.5, 0.9, 0.999] {
                let a = chisq_quantile(df, p).unwrap();
                let back = chisq_cdf(df, a);
                assert!(((back - p) / p).abs() < 1e-9, "df={df} p={p} back={back}");
            }
        }
    }

    #[test]
    fn quantile_rejects_bad_probabilities() {
        assert!(chisq_quantile(3.0, 0.0).is_err());
        assert!(chisq_quantile(3.0, 1.0).is_err());
        assert!(chisq_quantile(0.0, 0.5).is_err());
    }

    #[test]
    fn normal_quantile_round_trip() {
        let q = normal_quantile(0.975);
        assert!((q - 1.959_963_984_540_054).abs() < 1e-12, "{q:e} {:e}", normal_cdf(-q));
        assert!((normal_cdf(normal_quantile(0.1)) - 0.1).abs() < 1e-12);
        assert!((two_sided_normal_pvalue(1.959_963_984_540_054) - 0.05).abs() < 1e-12);
    }
}
