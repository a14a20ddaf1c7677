use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates of a finite population together with the column subsets used
/// for rerandomization (`rr_cols`) and for adjustment (`adj_cols`).
#[derive(Debug, Clone)]
pub struct ExperimentFrame {
    covariates: DMatrix<f64>,
    names: Vec<String>,
    rr_cols: Vec<usize>,
    adj_cols: Vec<usize>,
}

impl ExperimentFrame {
    pub fn new(
        covariates: DMatrix<f64>,
        names: Vec<String>,
        rr_cols: Vec<usize>,
        adj_cols: Vec<usize>,
    ) -> Result<Self> {
        let (n, k) = covariates.shape();
        if names.len() != k {
            return Err(Error::arg(format!("{} column names for {k} columns", names.len())));
        }
        if n < 4 {
            return Err(Error::arg(format!("need at least 4 units, got {n}")));
        }
        if rr_cols.is_empty() {
            return Err(Error::arg("rerandomization column set is empty"));
        }
        check_subset(&rr_cols, k, "rerandomization")?;
        check_subset(&adj_cols, k, "adjustment")?;
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("covariates contain non-finite values"));
        }
        Ok(Self { covariates, names, rr_cols, adj_cols })
    }

    /// Frame using every column for both rerandomization and adjustment, with
    /// generated names `x1..xk`.
    pub fn from_matrix(covariates: DMatrix<f64>) -> Result<Self> {
        let k = covariates.ncols();
        let names = (1..=k).map(|j| format!("x{j}")).collect();
        Self::new(covariates, names, (0..k).collect(), (0..k).collect())
    }

    /// Same covariates with different column roles.
    pub fn with_columns(&self, rr_cols: Vec<usize>, adj_cols: Vec<usize>) -> Result<Self> {
        Self::new(self.covariates.clone(), self.names.clone(), rr_cols, adj_cols)
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn k(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn d(&self) -> usize {
        self.rr_cols.len()
    }

    pub fn p(&self) -> usize {
        self.adj_cols.len()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rr_cols(&self) -> &[usize] {
        &self.rr_cols
    }

    pub fn adj_cols(&self) -> &[usize] {
        &self.adj_cols
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    /// Resolve column names to indices.
    pub fn resolve_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|s| {
                self.column_index(s.as_ref())
                    .ok_or_else(|| Error::arg(format!("unknown column '{}'", s.as_ref())))
            })
            .collect()
    }

    /// Columns `cols` as an `n × cols.len()` matrix.
    pub fn select(&self, cols: &[usize]) -> DMatrix<f64> {
        self.covariates.select_columns(cols)
    }

    pub fn rr_matrix(&self) -> DMatrix<f64> {
        self.select(&self.rr_cols)
    }

    pub fn adj_matrix(&self) -> DMatrix<f64> {
        self.select(&self.adj_cols)
    }

    /// Rows of the frame permuted by `perm` (new row `i` is old row `perm[i]`).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::arg("permutation length does not match n"));
        }
        let m = DMatrix::from_fn(n, self.k(), |i, j| self.covariates[(perm[i], j)]);
        Self::new(m, self.names.clone(), self.rr_cols.clone(), self.adj_cols.clone())
    }
}

fn check_subset(cols: &[usize], k: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; k];
    for &c in cols {
        if c >= k {
            return Err(Error::arg(format!("{what} column index {c} out of range (k = {k})")));
        }
        if seen[c] {
            return Err(Error::arg(format!("duplicate {what} column index {c}")));
        }
        seen[c] = true;
    }
    Ok(())
}

/// Both potential outcomes of every unit. Only simulations have these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    y1: Vec<f64>,
    y0: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>) -> Result<Self> {
        if y1.len() != y0.len() {
            return Err(Error::arg("potential outcome vectors differ in length"));
        }
        if y1.iter().chain(&y0).any(|v| !v.is_finite()) {
            return Err(Error::arg("potential outcomes must be finite"));
        }
        Ok(Self { y1, y0 })
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    /// Individual effects `Y_i(1) - Y_i(0)`.
    pub fn unit_effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// Finite-population average treatment effect.
    pub fn ate(&self) -> f64 {
        self.unit_effects().iter().sum::<f64>() / self.len() as f64
    }

    /// Outcomes revealed by a treatment vector.
    pub fn observe(&self, z: &[bool]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &t)| if t { self.y1[i] } else { self.y0[i] })
            .collect()
    }
}
