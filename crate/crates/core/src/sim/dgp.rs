use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{ExperimentFrame, PotentialOutcomes};
use crate::rng::{stream, Purpose};

/// Outcome model of the simulated population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `Y(0) = Σ_j x_j + δ`, `σ = SD(Σ_j x_j)/5`.
    Linear,
    /// `Y(0) = Σ_j g(x_j) + δ`, `σ = SD(Σ_j g(x_j))/100`.
    #[serde(rename = "nonlinear", alias = "non_linear")]
    NonLinear,
}

impl DgpKind {
    pub fn label(self) -> &'static str {
        match self {
            DgpKind::Linear => "linear",
            DgpKind::NonLinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSetting {
    pub kind: DgpKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl DgpSetting {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Self {
        Self { kind, n, d: 10, seed }
    }

    pub fn with_d(mut self, d: usize) -> Self {
        self.d = d;
        self
    }
}

/// The piecewise nonlinearity; branches are tested in order.
pub fn g(x: f64) -> f64 {
    if x < -1.0 {
        x + 0.4
    } else if x < 1.0 {
        x * x - 1.6
    } else {
        x.sin() - 1.45
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One finite population: covariates with unit variances and pairwise
/// correlation 0.7, and potential outcomes with `Y(1) = Y(0) + 1`.
///
/// All covariates start out as both rerandomization and adjustment columns.
pub fn generate_dgp(setting: &DgpSetting) -> Result<(ExperimentFrame, PotentialOutcomes)> {
    let DgpSetting { kind, n, d, seed } = *setting;
    if d == 0 {
        return Err(Error::arg("d must be at least 1"));
    }
    if n < 4 {
        return Err(Error::arg(format!("need at least 4 units, got {n}")));
    }
    let mut rng = stream(seed, Purpose::Dataset, 0);
    let (own, common) = (0.3f64.sqrt(), 0.7f64.sqrt());
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let c: f64 = rng.sample(StandardNormal);
        for j in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            x[(i, j)] = own * e + common * c;
        }
    }
    let signal: Vec<f64> = (0..n)
        .map(|i| match kind {
            DgpKind::Linear => x.row(i).sum(),
            DgpKind::NonLinear => x.row(i).iter().map(|&v| g(v)).sum(),
        })
        .collect();
    let sigma = sample_sd(&signal)
        / match kind {
            DgpKind::Linear => 5.0,
            DgpKind::NonLinear => 100.0,
        };
    let y0: Vec<f64> = signal.iter().map(|s| s + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let y1 = y0.iter().map(|v| v + 1.0).collect();
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    let all: Vec<usize> = (0..d).collect();
    Ok((ExperimentFrame::new(x, names, all.clone(), all)?, PotentialOutcomes::new(y1, y0)?))
}
