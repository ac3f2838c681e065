//! Gaussian noise augmentation: resample real rows and perturb each column
//! by a fraction of its standard deviation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::TensorArchive;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::normal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Noise standard deviation as a fraction of each column's std.
    pub fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { fraction: 0.1 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.0 && self.fraction.is_finite()) {
            return Err(super::config_err("noise fraction must be a finite value >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub data: Matrix<f64>,
    pub labels: Vec<u8>,
    /// Per-column noise standard deviation.
    pub scales: Vec<f64>,
}

impl NoiseModel {
    pub fn fit(joint: &Matrix<f64>, labels: &[u8], cfg: &NoiseConfig) -> Result<Self> {
        cfg.validate()?;
        if joint.rows() < 2 {
            return Err(Error::InsufficientData("noise augmentation needs at least 2 rows".into()));
        }
        let scales = joint.column_stds().into_iter().map(|s| cfg.fraction * s).collect();
        Ok(Self {
            data: joint.clone(),
            labels: labels.to_vec(),
            scales,
        })
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> (Matrix<f64>, Vec<u8>) {
        let d = self.data.cols();
        let mut out = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..self.data.rows());
            for (v, s) in self.data.row(i).iter().zip(&self.scales) {
                out.push(v + s * normal(rng));
            }
            labels.push(self.labels[i]);
        }
        (Matrix::from_vec(n, d, out).expect("consistent shape"), labels)
    }

    pub fn store(&self, a: &mut TensorArchive) {
        let t = crate::autodiff::Tensor::new([self.data.rows(), self.data.cols()], self.data.as_slice().to_vec())
            .expect("consistent shape");
        a.insert("noise.data", &t);
        a.insert_values("noise.labels", &self.labels.iter().map(|&y| y as f64).collect::<Vec<_>>());
        a.insert_values("noise.scales", &self.scales);
    }

    pub fn restore(a: &TensorArchive) -> Result<Self> {
        let t = a.get::<f64>("noise.data")?;
        let data = Matrix::from_vec(t.rows(), t.cols(), t.into_data())?;
        let labels = a.values("noise.labels")?.into_iter().map(|v| v as u8).collect();
        Ok(Self {
            data,
            labels,
            scales: a.values("noise.scales")?,
        })
    }
}
