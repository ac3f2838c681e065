use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeights {
    Uniform,
    Distance,
}

/// Euclidean k-nearest neighbours over already-scaled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    x: Matrix<f64>,
    y: Vec<u8>,
    k: usize,
    weights: KnnWeights,
}

impl Knn {
    pub fn fit(x: Matrix<f64>, y: Vec<u8>, k: usize, weights: KnnWeights) -> Self {
        Self {
            x,
            y,
            k: k.max(1),
            weights,
        }
    }

    /// Class-1 probability as the weighted fraction of class-1 neighbours.
    /// Under distance weighting, exact matches take all of the weight.
    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
            .collect();
        let k = self.k.min(dist.len());
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &mut dist[..k];
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut w1, mut w) = (0.0, 0.0);
        let exact = self.weights == KnnWeights::Distance && nearest[0].0 == 0.0;
        for &(d, i) in nearest.iter() {
            let wi = match self.weights {
                KnnWeights::Uniform => 1.0,
                KnnWeights::Distance if exact => (d == 0.0) as u8 as f64,
                KnnWeights::Distance => 1.0 / d,
            };
            w += wi;
            w1 += wi * self.y[i] as f64;
        }
        w1 / w
    }
}
