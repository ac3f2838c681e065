use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, sample_without_replacement};

use super::tree::{Criterion, Presorted, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostLoss {
    /// Binary logistic loss; the score is a log-odds.
    Logistic,
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    /// L2 penalty on leaf values (logistic loss only).
    pub lambda: f64,
    pub loss: BoostLoss,
}

/// Gradient-boosted regression trees. Each round fits a squared-error tree
/// to the negative gradient on a row subsample; for logistic loss the leaf
/// values are then replaced by the Newton step `sum g / (sum h + lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBoost {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    loss: BoostLoss,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GradBoost {
    pub fn fit(x: &Matrix<f64>, y: &[f64], params: BoostParams, seed: u64) -> Self {
        let n = x.rows();
        let mean = y.iter().sum::<f64>() / n.max(1) as f64;
        let base = match params.loss {
            BoostLoss::Logistic => {
                let p = mean.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            BoostLoss::SquaredError => mean,
        };
        let mut score = vec![base; n];
        let tree_params = TreeParams {
            criterion: Criterion::SquaredError,
            max_depth: Some(params.max_depth),
            min_samples_split: 2,
            max_features: None,
        };
        let m = ((params.subsample.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n.max(1));
        let presorted = Presorted::new(x);
        let mut trees = Vec::with_capacity(params.n_estimators);
        let mut grad = vec![0.0; n];
        for t in 0..params.n_estimators {
            let mut rng = rng_from_seed(derive_seed(seed, &[t as u64]));
            let rows = if m < n {
                let mut r = sample_without_replacement(&mut rng, n, m);
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            for i in 0..n {
                grad[i] = match params.loss {
                    BoostLoss::Logistic => y[i] - sigmoid(score[i]),
                    BoostLoss::SquaredError => y[i] - score[i],
                };
            }
            let mut tree = Tree::fit_presorted(x, &grad, &rows, &presorted, tree_params, &mut rng);
            if params.loss == BoostLoss::Logistic {
                let mut g_sum = std::collections::HashMap::<usize, (f64, f64)>::new();
                for &i in &rows {
                    let p = sigmoid(score[i]);
                    let e = g_sum.entry(tree.leaf_index(x.row(i))).or_default();
                    e.0 += grad[i];
                    e.1 += p * (1.0 - p);
                }
                tree.set_leaf_values(|leaf| {
                    g_sum.get(&leaf).map_or(0.0, |&(g, h)| g / (h + params.lambda))
                });
            }
            for (i, s) in score.iter_mut().enumerate() {
                *s += params.learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        Self {
            base,
            learning_rate: params.learning_rate,
            trees,
            loss: params.loss,
        }
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }

    /// Class-1 probability for logistic loss, the regression value otherwise.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.loss {
            BoostLoss::Logistic => sigmoid(self.raw_score(x)),
            BoostLoss::SquaredError => self.raw_score(x),
        }
    }
}
