//! Finite-population means, covariances and linear-projection variances.
//!
//! All covariances use the divisor `n - 1` (or `n_z - 1` within an arm) and
//! are computed in two passes: means first, then centred cross products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ExperimentFrame;

/// Relative eigenvalue cut-off below which a covariance matrix is treated
/// as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Mean vector and covariance matrix of a set of columns.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub mean_x: DVector<f64>,
    pub cov_xx: DMatrix<f64>,
}

/// Within-arm outcome variance and outcome–covariate covariances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmStats {
    pub n: usize,
    pub mean_y: f64,
    pub var_y: f64,
    pub cov_yx: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmMoments {
    pub treated: ArmStats,
    pub control: ArmStats,
}

pub fn column_moments(frame: &ExperimentFrame, cols: &[usize]) -> Result<SampleMoments> {
    if cols.is_empty() {
        return Err(Error::arg("column subset is empty"));
    }
    if let Some(&bad) = cols.iter().find(|&&c| c >= frame.k()) {
        return Err(Error::arg(format!("column index {bad} out of range")));
    }
    matrix_moments(&frame.select(cols))
}

/// Two-pass mean and covariance of the columns of `x`.
pub fn matrix_moments(x: &DMatrix<f64>) -> Result<SampleMoments> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::arg("need at least two rows for a covariance"));
    }
    if d == 0 {
        return Err(Error::arg("column subset is empty"));
    }
    let mean_x = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    let mut centred = x.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean_x[j]);
    }
    let mut cov_xx = centred.tr_mul(&centred) / (n - 1) as f64;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov_xx[(i, j)] + cov_xx[(j, i)]);
            cov_xx[(i, j)] = v;
            cov_xx[(j, i)] = v;
        }
    }
    Ok(SampleMoments { mean_x, cov_xx })
}

/// Per-arm outcome moments against the columns of `x`.
pub fn arm_moments(x: &DMatrix<f64>, y: &[f64], z: &[bool]) -> Result<ArmMoments> {
    if x.nrows() != y.len() || y.len() != z.len() {
        return Err(Error::arg("row counts of x, y and z differ"));
    }
    Ok(ArmMoments { treated: arm_stats(x, y, z, true)?, control: arm_stats(x, y, z, false)? })
}

fn arm_stats(x: &DMatrix<f64>, y: &[f64], z: &[bool], arm: bool) -> Result<ArmStats> {
    let rows: Vec<usize> = (0..y.len()).filter(|&i| z[i] == arm).collect();
    let m = rows.len();
    if m < 2 {
        return Err(Error::arg(format!("arm {} has fewer than two units", arm as u8)));
    }
    let d = x.ncols();
    let mean_y = rows.iter().map(|&i| y[i]).sum::<f64>() / m as f64;
    let mean_x: Vec<f64> = (0..d).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / m as f64).collect();
    let denom = (m - 1) as f64;
    let var_y = rows.iter().map(|&i| (y[i] - mean_y).powi(2)).sum::<f64>() / denom;
    let cov_yx = (0..d)
        .map(|j| rows.iter().map(|&i| (y[i] - mean_y) * (x[(i, j)] - mean_x[j])).sum::<f64>() / denom)
        .collect();
    Ok(ArmStats { n: m, mean_y, var_y, cov_yx })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    /// Fail with `SingularCovariance` on rank deficiency.
    #[default]
    Strict,
    /// Moore–Penrose pseudo-inverse, dropping eigenvalues below the tolerance.
    PseudoInverse,
}

/// Eigen-decomposed symmetric PSD matrix supporting inverse quadratic forms.
#[derive(Debug, Clone)]
pub struct CovInverse {
    vectors: DMatrix<f64>,
    /// Reciprocal eigenvalues, zero for dropped directions.
    inv_values: DVector<f64>,
    rank_deficient: bool,
}

impl CovInverse {
    pub fn new(cov: &DMatrix<f64>, mode: InverseMode) -> Result<Self> {
        let d = cov.nrows();
        if d == 0 || cov.ncols() != d {
            return Err(Error::arg("covariance matrix must be square and non-empty"));
        }
        let eig = SymmetricEigen::new(cov.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let cut = SINGULAR_TOL * max;
        let rank_deficient = !(max > 0.0) || min <= cut;
        if rank_deficient && mode == InverseMode::Strict {
            let ratio = if max > 0.0 { min / max } else { 0.0 };
            return Err(Error::SingularCovariance { ratio });
        }
        let inv_values = eig.eigenvalues.map(|l| if max > 0.0 && l > cut { 1.0 / l } else { 0.0 });
        Ok(Self { vectors: eig.eigenvectors, inv_values, rank_deficient })
    }

    pub fn dim(&self) -> usize {
        self.inv_values.len()
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// `v' S⁻¹ v`, always ≥ 0.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        let proj = self.vectors.tr_mul(&v);
        proj.iter().zip(self.inv_values.iter()).map(|(p, w)| p * p * w).sum()
    }

    /// `S⁻¹ v`.
    pub fn solve(&self, v: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(v);
        let proj = self.vectors.tr_mul(&v).component_mul(&self.inv_values);
        &self.vectors * proj
    }

    /// `T` with `T'T = S⁻¹`, so that `v'S⁻¹v = |T v|²`.
    pub fn whitening(&self) -> DMatrix<f64> {
        let scale = self.inv_values.map(f64::sqrt);
        let mut t = self.vectors.transpose();
        for (i, mut row) in t.row_iter_mut().enumerate() {
            row *= scale[i];
        }
        t
    }
}

/// `S_{Y,X} (S²_X)⁻¹ S_{X,Y}`.
pub fn projection_variance(cov_yx: &[f64], cov_xx: &DMatrix<f64>) -> Result<f64> {
    projection_variance_with(cov_yx, &CovInverse::new(cov_xx, InverseMode::Strict)?)
}

pub fn projection_variance_with(cov_yx: &[f64], inv: &CovInverse) -> Result<f64> {
    if cov_yx.len() != inv.dim() {
        return Err(Error::arg("covariance row length does not match the covariance matrix"));
    }
    Ok(inv.quad_form(cov_yx))
}

/// `s²_{τ|X}`: projection variance of the difference of the arms' covariance rows.
pub fn tau_projection_variance(arms: &ArmMoments, cov_xx: &DMatrix<f64>) -> Result<f64> {
    tau_projection_variance_with(arms, &CovInverse::new(cov_xx, InverseMode::Strict)?)
}

pub fn tau_projection_variance_with(arms: &ArmMoments, inv: &CovInverse) -> Result<f64> {
    if arms.treated.cov_yx.len() != arms.control.cov_yx.len() {
        return Err(Error::arg("arm covariance rows use different column sets"));
    }
    let diff: Vec<f64> = arms.treated.cov_yx.iter().zip(&arms.control.cov_yx).map(|(a, b)| a - b).collect();
    projection_variance_with(&diff, inv)
}
