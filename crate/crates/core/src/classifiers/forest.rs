use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

use super::tree::{Criterion, Presorted, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub tree: TreeParams,
}

/// Bagged CART ensemble. For classification each tree casts a hard vote and
/// the class-1 probability is the vote fraction; for regression the trees
/// are averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
    classification: bool,
}

impl RandomForest {
    pub fn fit(x: &Matrix<f64>, y: &[f64], params: ForestParams, seed: u64) -> Self {
        let n = x.rows();
        let presorted = Presorted::new(x);
        let trees = (0..params.n_estimators.max(1))
            .map(|t| {
                let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                Tree::fit_presorted(x, y, &rows, &presorted, params.tree, &mut rng)
            })
            .collect();
        Self {
            trees,
            classification: params.tree.criterion != Criterion::SquaredError,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let total: f64 = if self.classification {
            self.trees.iter().filter(|t| t.predict_row(x) > 0.5).count() as f64
        } else {
            self.trees.iter().map(|t| t.predict_row(x)).sum()
        };
        total / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// `floor(sqrt(d))`, at least 1.
pub fn sqrt_features(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}
