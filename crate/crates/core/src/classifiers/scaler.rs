use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Per-feature standardization fitted on a training split. Constant
/// features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(x: &Matrix<f64>) -> Self {
        let means = x.column_means();
        let stds = x.column_stds().into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Self { means, stds }
    }

    pub fn transform(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row(out.row_mut(i));
        }
        out
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }
}
