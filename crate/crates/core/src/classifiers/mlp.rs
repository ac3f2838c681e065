//! Small fully connected networks for binary classification and scalar
//! regression, trained with Adam and hold-out early stopping.

use serde::{Deserialize, Serialize};

use crate::autodiff::{bce, mse, Activation, AdamConfig, AdamState, Mlp, Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{permutation, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpTask {
    /// Sigmoid output trained with binary cross-entropy.
    Binary,
    /// Linear output trained with squared error on a standardized target.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of rows held out for early stopping; 0 disables it.
    pub val_fraction: f64,
}

impl MlpTrainConfig {
    pub fn new(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            lr: 1e-3,
            epochs: 200,
            batch_size: 32,
            patience: 10,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    net: Mlp<f64>,
    task: MlpTask,
    y_mean: f64,
    y_std: f64,
    pub epochs_run: usize,
}

fn batch_tensor(x: &Matrix<f64>, rows: &[usize]) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows.len() * x.cols());
    for &i in rows {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new([rows.len(), x.cols()], data).expect("row-major batch")
}

impl MlpModel {
    pub fn fit(x: &Matrix<f64>, y: &[f64], task: MlpTask, cfg: &MlpTrainConfig, seed: u64) -> Result<Self> {
        let n = x.rows();
        if n != y.len() {
            return Err(Error::Dimension { expected: n, got: y.len() });
        }
        if n < 2 {
            return Err(Error::InsufficientData("MLP needs at least 2 rows".into()));
        }
        let mut rng = rng_from_seed(seed);
        let (y_mean, y_std) = match task {
            MlpTask::Binary => (0.0, 1.0),
            MlpTask::Regression => {
                let m = y.iter().sum::<f64>() / n as f64;
                let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                (m, if s > 0.0 { s } else { 1.0 })
            }
        };
        let target: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let order = permutation(&mut rng, n);
        let n_val = if cfg.val_fraction > 0.0 {
            ((cfg.val_fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();

        let mut dims = vec![x.cols()];
        dims.extend(&cfg.hidden);
        dims.push(1);
        let out_act = match task {
            MlpTask::Binary => Activation::Sigmoid,
            MlpTask::Regression => Activation::Identity,
        };
        let mut net = Mlp::new(&dims, Activation::Relu, out_act, false, &mut rng)?;
        let mut adam = AdamState::for_params(AdamConfig::new(cfg.lr, 0.9, 0.999), &net.params());
        let loss_of = |p: &Tensor<f64>, t: &[f64]| -> f64 {
            let k = t.len() as f64;
            match task {
                MlpTask::Binary => {
                    let c = crate::autodiff::BCE_CLAMP;
                    p.data()
                        .iter()
                        .zip(t)
                        .map(|(&q, &ti)| {
                            let q = q.clamp(c, 1.0 - c);
                            -(ti * q.ln() + (1.0 - ti) * (1.0 - q).ln())
                        })
                        .sum::<f64>()
                        / k
                }
                MlpTask::Regression => p.data().iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / k,
            }
        };
        let val_x = batch_tensor(x, val);
        let val_t: Vec<f64> = val.iter().map(|&i| target[i]).collect();

        let mut best = (f64::INFINITY, net.clone());
        let mut stale = 0;
        let mut epochs_run = 0;
        let bs = cfg.batch_size.max(1);
        for epoch in 0..cfg.epochs {
            epochs_run = epoch + 1;
            crate::rng::shuffle(&mut rng, &mut train);
            for chunk in train.chunks(bs) {
                let tape = Tape::new();
                let vars = net.register(&tape);
                let xb = tape.leaf(batch_tensor(x, chunk));
                let tb = tape.leaf(Tensor::column_vector(chunk.iter().map(|&i| target[i]).collect()));
                let out = net.forward(&vars, xb)?;
                let loss = match task {
                    MlpTask::Binary => bce(out, tb)?,
                    MlpTask::Regression => mse(out, tb)?,
                };
                let grads = tape.backward(loss, &vars.all())?;
                adam.step(&mut net.params_mut(), &grads).map_err(|e| match e {
                    Error::Divergence { message, .. } => Error::Divergence { epoch, message },
                    other => other,
                })?;
            }
            if n_val > 0 {
                let v = loss_of(&net.predict(&val_x)?, &val_t);
                if v < best.0 - 1e-12 {
                    best = (v, net.clone());
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
            }
        }
        if n_val > 0 {
            net = best.1;
        }
        Ok(Self {
            net,
            task,
            y_mean,
            y_std,
            epochs_run,
        })
    }

    /// Class-1 probabilities (binary) or predictions in target units.
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        let t = Tensor::new([x.rows(), x.cols()], x.as_slice().to_vec())?;
        let out = self.net.predict(&t)?;
        Ok(match self.task {
            MlpTask::Binary => out.into_data(),
            MlpTask::Regression => out.data().iter().map(|v| v * self.y_std + self.y_mean).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    #[test]
    fn learns_a_linear_boundary() {
        let mut rng = rng_from_seed(1);
        let n = 200;
        let data: Vec<f64> = (0..2 * n).map(|_| normal(&mut rng)).collect();
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let y: Vec<f64> = (0..n).map(|i| (x[(i, 0)] + x[(i, 1)] > 0.0) as u8 as f64).collect();
        let mut cfg = MlpTrainConfig::new(&[16]);
        cfg.lr = 1e-2;
        cfg.epochs = 60;
        let m = MlpModel::fit(&x, &y, MlpTask::Binary, &cfg, 2).unwrap();
        let p = m.predict(&x).unwrap();
        let acc = p.iter().zip(&y).filter(|(a, b)| (**a > 0.5) == (**b == 1.0)).count();
        assert!(acc as f64 / n as f64 > 0.9);
    }

    #[test]
    fn regression_recovers_linear_target() {
        let mut rng = rng_from_seed(3);
        let n = 200;
        let data: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let x = Matrix::from_vec(n, 1, data).unwrap();
        let y: Vec<f64> = (0..n).map(|i| 5.0 + 2.0 * x[(i, 0)]).collect();
        let mut cfg = MlpTrainConfig::new(&[16]);
        cfg.lr = 1e-2;
        let m = MlpModel::fit(&x, &y, MlpTask::Regression, &cfg, 4).unwrap();
        let p = m.predict(&x).unwrap();
        let mse: f64 = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        assert!(mse < 0.1, "{mse}");
    }
}
