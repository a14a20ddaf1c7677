use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::balance::Assignment;
use crate::error::{Error, Result};

/// Partition of the units into `K` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    fold_of_unit: Vec<usize>,
    k: usize,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of_unit(&self) -> &[usize] {
        &self.fold_of_unit
    }

    /// Units in fold `f`, in increasing order.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of_unit.len()).filter(|&i| self.fold_of_unit[i] == f).collect()
    }

    /// Units outside fold `f`, in increasing order.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of_unit.len()).filter(|&i| self.fold_of_unit[i] != f).collect()
    }

    /// The plan with a single fold holding every unit.
    pub fn single(n: usize) -> Self {
        Self { fold_of_unit: vec![0; n], k: 1 }
    }

    pub fn from_labels(fold_of_unit: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || fold_of_unit.iter().any(|&f| f >= k) {
            return Err(Error::Fold("fold labels must lie in [0, K)".into()));
        }
        Ok(Self { fold_of_unit, k })
    }
}

/// Arm-stratified folds: each arm is shuffled and dealt round-robin, the
/// control arm continuing where the treated arm stopped so that fold sizes
/// differ by at most one.
pub fn make_folds<R: Rng + ?Sized>(z: &Assignment, k: usize, rng: &mut R) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::Fold("K must be at least 1".into()));
    }
    if z.n1() < 2 * k || z.n0() < 2 * k {
        return Err(Error::Fold(format!(
            "{k} folds need at least {} units per arm (have {} treated, {} control)",
            2 * k,
            z.n1(),
            z.n0()
        )));
    }
    let mut treated: Vec<usize> = (0..z.n()).filter(|&i| z.z()[i]).collect();
    let mut control: Vec<usize> = (0..z.n()).filter(|&i| !z.z()[i]).collect();
    treated.shuffle(rng);
    control.shuffle(rng);
    let mut fold_of_unit = vec![0; z.n()];
    for (pos, &i) in treated.iter().enumerate() {
        fold_of_unit[i] = pos % k;
    }
    let offset = treated.len() % k;
    for (pos, &i) in control.iter().enumerate() {
        fold_of_unit[i] = (pos + offset) % k;
    }
    Ok(FoldPlan { fold_of_unit, k })
}
