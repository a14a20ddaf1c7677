use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::ExperimentFrame;

/// Which covariates the design and the analysis see.
///
/// With `d` covariates, the design-only block is the first 60% and the
/// analysis block starts at 30%; for `d = 10` that is `x1..x6` and `x4..x10`.
///
/// | id | design | analysis |
/// |----|--------|----------|
/// | 1  | all    | all      |
/// | 2  | block  | all      |
/// | 3  | all    | block    |
/// | 4  | block  | block    |
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: u8,
    pub rr_cols: Vec<usize>,
    pub adj_cols: Vec<usize>,
}

impl ScenarioSpec {
    pub fn standard(scenario_id: u8, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::arg("scenarios need at least two covariates"));
        }
        let all: Vec<usize> = (0..d).collect();
        let design_block: Vec<usize> = (0..(6 * d).div_ceil(10)).collect();
        let analysis_block: Vec<usize> = ((3 * d) / 10..d).collect();
        let (rr_cols, adj_cols) = match scenario_id {
            1 => (all.clone(), all),
            2 => (design_block, all),
            3 => (all, analysis_block),
            4 => (design_block, analysis_block),
            other => return Err(Error::arg(format!("scenario must be 1, 2, 3 or 4, got {other}"))),
        };
        Ok(Self { scenario_id, rr_cols, adj_cols })
    }

    pub fn apply(&self, frame: &ExperimentFrame) -> Result<ExperimentFrame> {
        frame.with_columns(self.rr_cols.clone(), self.adj_cols.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_covariate_layout() {
        let s2 = ScenarioSpec::standard(2, 10).unwrap();
        assert_eq!(s2.rr_cols, (0..6).collect::<Vec<_>>());
        assert_eq!(s2.adj_cols.len(), 10);
        let s3 = ScenarioSpec::standard(3, 10).unwrap();
        assert_eq!(s3.adj_cols, (3..10).collect::<Vec<_>>());
        let s4 = ScenarioSpec::standard(4, 10).unwrap();
        assert_eq!((s4.rr_cols.len(), s4.adj_cols.len()), (6, 7));
        assert!(ScenarioSpec::standard(5, 10).is_err());
    }

    #[test]
    fn hundred_covariate_layout() {
        let s4 = ScenarioSpec::standard(4, 100).unwrap();
        assert_eq!(s4.rr_cols, (0..60).collect::<Vec<_>>());
        assert_eq!(s4.adj_cols, (30..100).collect::<Vec<_>>());
    }
}
