use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::OutcomeModel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Purpose, StreamRng};

/// Hyperparameters of the bagged regression forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Resample rows with replacement for every tree.
    pub bootstrap: bool,
    /// Features tried per split; `None` means `⌈√p⌉`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 15, max_depth: None, min_leaf: 5, bootstrap: true, max_features: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Bagged CART regression trees with variance-reduction splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    p: usize,
}

struct Builder<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    nodes: Vec<Node>,
    order: Vec<usize>,
    scratch: Vec<(f64, f64)>,
}

impl Forest {
    pub fn fit(params: &ForestParams, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Self> {
        let (n, p) = x.shape();
        if n != y.len() {
            return Err(Error::arg(format!("x has {n} rows but y has {} entries", y.len())));
        }
        if params.n_trees == 0 {
            return Err(Error::arg("a forest needs at least one tree"));
        }
        if params.min_leaf == 0 {
            return Err(Error::arg("min_leaf must be at least 1"));
        }
        if n < 2 * params.min_leaf {
            return Err(Error::arg(format!("forest needs at least {} rows, got {n}", 2 * params.min_leaf)));
        }
        let cols: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().cloned().collect()).collect();
        let mtry = params.max_features.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1));
        let key = derive_seed(params.seed, seed);
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = stream(key, Purpose::Forest, t as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    cols: &cols,
                    y,
                    max_depth: params.max_depth.unwrap_or(usize::MAX),
                    min_leaf: params.min_leaf,
                    mtry,
                    nodes: Vec::new(),
                    order: (0..p).collect(),
                    scratch: Vec::with_capacity(n),
                };
                let mut rows = rows;
                b.grow(&mut rows, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees, p })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Builder<'_> {
    /// Grows the subtree for `rows` and returns its node index.
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut StreamRng) -> usize {
        let m = rows.len();
        let sum: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mean = sum / m as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        if depth >= self.max_depth || m < 2 * self.min_leaf || self.cols.is_empty() {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, sum, rng) else {
            return id;
        };
        let col = &self.cols[feature];
        let mut k = 0;
        for j in 0..m {
            if col[rows[j]] <= threshold {
                rows.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = rows.split_at_mut(k);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }

    /// Best variance-reduction split over randomly ordered features. As in
    /// common CART implementations, features keep being drawn past `mtry`
    /// until at least one valid split has been seen.
    fn best_split(&mut self, rows: &[usize], sum: f64, rng: &mut StreamRng) -> Option<(usize, f64)> {
        let m = rows.len();
        let base = sum * sum / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        self.order.shuffle(rng);
        for (tried, fi) in (0..self.order.len()).enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            let f = self.order[fi];
            let col = &self.cols[f];
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&i| (col[i], self.y[i])));
            self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for j in 0..m - 1 {
                left += self.scratch[j].1;
                let nl = j + 1;
                if nl < self.min_leaf || m - nl < self.min_leaf {
                    continue;
                }
                let (xa, xb) = (self.scratch[j].0, self.scratch[j + 1].0);
                if xa == xb {
                    continue;
                }
                let right = sum - left;
                let score = left * left / nl as f64 + right * right / (m - nl) as f64;
                if best.is_none_or(|(s, _, _)| score > s) {
                    let mut thr = 0.5 * (xa + xb);
                    if thr >= xb {
                        thr = xa;
                    }
                    best = Some((score, f, thr));
                }
            }
        }
        let (score, f, thr) = best?;
        (score > base + 1e-12 * base.abs().max(1e-300)).then_some((f, thr))
    }
}

impl OutcomeModel for Forest {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        assert_eq!(x.ncols(), self.p, "prediction matrix has the wrong number of columns");
        let mut row = vec![0.0; self.p];
        (0..x.nrows())
            .map(|i| {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = x[(i, j)];
                }
                self.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}
