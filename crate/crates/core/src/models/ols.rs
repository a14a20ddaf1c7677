use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::OutcomeModel;
use crate::error::{Error, Result};

/// Relative singular-value cut-off for the least-squares solve.
const RANK_TOL: f64 = 1e-10;

/// Least-squares fit `y ≈ intercept + x·coef`.
///
/// Solved on centred columns through an SVD, so a rank-deficient design
/// yields the minimum-norm slope vector instead of failing; such fits are
/// flagged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
}

pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::arg(format!("x has {n} rows but y has {} entries", y.len())));
    }
    if n == 0 {
        return Err(Error::arg("cannot fit a regression on zero rows"));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(OlsFit { intercept: y_mean, coef: Vec::new(), rank: 0, rank_deficient: false });
    }
    let means: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = xc.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| smax > 0.0 && s > cut).count();
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD did not return V'".into()))?;
    let uty = u.tr_mul(&yc);
    let mut w = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > cut {
            w[k] = uty[k] / s;
        }
    }
    let beta = v_t.tr_mul(&w);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares coefficients".into()));
    }
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(OlsFit { intercept, coef: beta.iter().cloned().collect(), rank, rank_deficient: rank < p })
}

impl OlsFit {
    pub fn predict_row(&self, row: impl IntoIterator<Item = f64>) -> f64 {
        self.intercept + row.into_iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>()
    }
}

impl OutcomeModel for OlsFit {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.coef.len(), "prediction matrix has the wrong number of columns");
        let mut out = vec![self.intercept; x.nrows()];
        for (j, b) in self.coef.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(x.column(j).iter()) {
                *o += b * v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = (0..n).map(|_| rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn exact_line_is_reproduced() {
        let x = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.5, -1.0]);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = fit_ols(&x, &y).unwrap();
        for (p, t) in fit.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_normal_equations() {
        let (x, y) = random(40, 4, 3);
        let fit = fit_ols(&x, &y).unwrap();
        let design = DMatrix::from_fn(40, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let xtx = design.tr_mul(&design);
        let xty = design.tr_mul(&DVector::from_column_slice(&y));
        let beta = xtx.lu().solve(&xty).unwrap();
        assert_relative_eq!(fit.intercept, beta[0], epsilon = 1e-8);
        for j in 0..4 {
            assert_relative_eq!(fit.coef[j], beta[j + 1], epsilon = 1e-8);
        }
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn duplicate_column_falls_back_to_min_norm() {
        let (x0, y) = random(30, 2, 5);
        let x = DMatrix::from_fn(30, 3, |i, j| x0[(i, j.min(1))]);
        let fit = fit_ols(&x, &y).unwrap();
        assert!(fit.rank_deficient);
        let reference = fit_ols(&x0, &y).unwrap();
        assert_relative_eq!(fit.coef[1], fit.coef[2], epsilon = 1e-10);
        for (a, b) in fit.predict(&x).iter().zip(reference.predict(&x0)) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn no_columns_gives_the_mean() {
        let x = DMatrix::zeros(3, 0);
        let fit = fit_ols(&x, &[1.0, 2.0, 6.0]).unwrap();
        assert_eq!(fit.predict(&x), vec![3.0; 3]);
    }
}
