//! Invertible per-column affine scalings used by the neural generators.

use serde::{Deserialize, Serialize};

use crate::autodiff::TensorArchive;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingKind {
    /// Map `[min, max]` onto `[-1, 1]`; constant columns map to 0.
    MinMax,
    /// Zero mean, unit population variance; constant columns keep scale 1.
    ZScore,
}

/// `scaled = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaler {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ColumnScaler {
    pub fn fit(x: &Matrix<f64>, kind: ScalingKind) -> Self {
        let (offset, scale) = match kind {
            ScalingKind::MinMax => (0..x.cols())
                .map(|j| {
                    let col = x.column(j);
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let half = 0.5 * (hi - lo);
                    (0.5 * (hi + lo), if half > 0.0 { half } else { 1.0 })
                })
                .unzip(),
            ScalingKind::ZScore => {
                let stds = x.column_stds();
                (x.column_means(), stds.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect())
            }
        };
        Self { offset, scale }
    }

    pub fn transform(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.offset[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn inverse(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.offset[j];
            }
        }
        out
    }

    pub fn store(&self, prefix: &str, a: &mut TensorArchive) {
        a.insert_values(format!("{prefix}.offset"), &self.offset);
        a.insert_values(format!("{prefix}.scale"), &self.scale);
    }

    pub fn restore(prefix: &str, a: &TensorArchive) -> Result<Self> {
        let offset = a.values(&format!("{prefix}.offset"))?;
        let scale = a.values(&format!("{prefix}.scale"))?;
        if offset.len() != scale.len() {
            return Err(Error::Checkpoint(format!("{prefix}: scaler lengths differ")));
        }
        Ok(Self { offset, scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_hits_unit_interval_and_inverts() {
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let s = ColumnScaler::fit(&x, ScalingKind::MinMax);
        let t = s.transform(&x);
        assert_eq!(t.column(0), vec![-1.0, 1.0, 0.0]);
        assert_eq!(t.column(1), vec![0.0; 3]);
        assert_eq!(s.inverse(&t), x);
    }

    #[test]
    fn z_score_has_unit_variance() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = ColumnScaler::fit(&x, ScalingKind::ZScore);
        let t = s.transform(&x);
        assert!(t.column_means()[0].abs() < 1e-12);
        assert!((t.column_stds()[0] - 1.0).abs() < 1e-12);
    }
}
