use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 0.999)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[[usize; 2]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| p.shape()).collect();
        Self::new(config, &shapes)
    }

    /// Apply one update. A non-finite gradient leaves parameters untouched
    /// and returns [`Error::Divergence`] with `epoch = 0`; trainers rewrite
    /// the epoch.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[k].shape() != g.shape() {
                return Err(Error::Shape(format!("adam: parameter {k} shape mismatch")));
            }
            if !g.is_finite() {
                return Err(Error::Divergence {
                    epoch: 0,
                    message: format!("non-finite gradient for parameter {k}"),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (T::one() - b1) * gi;
                vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] = pd[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = Tensor::scalar(0.0f64);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.9, 0.999), &[[1, 1]]);
        // f(x) = x has gradient 1 everywhere.
        adam.step(&mut [&mut x], &[Tensor::scalar(1.0)]).unwrap();
        assert!((x.item() + 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_beta1_tracks_current_gradient() {
        let mut x = Tensor::scalar(0.0f64);
        let mut adam = AdamState::new(AdamConfig::new(1e-4, 0.0, 0.9), &[[1, 1]]);
        for g in [1.0, -2.0, 0.5] {
            adam.step(&mut [&mut x], &[Tensor::scalar(g)]).unwrap();
            assert_eq!(adam.m[0].item(), g);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut x = Tensor::scalar(0.0f64);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.9, 0.999), &[[1, 1]]);
        for _ in 0..200 {
            let g = 2.0 * (x.item() - 2.0);
            adam.step(&mut [&mut x], &[Tensor::scalar(g)]).unwrap();
        }
        assert!((x.item() - 2.0).abs() < 0.05, "{}", x.item());
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut x = Tensor::scalar(1.0f32);
        let mut adam = AdamState::new(AdamConfig::default(), &[[1, 1]]);
        let err = adam.step(&mut [&mut x], &[Tensor::scalar(f32::NAN)]).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert_eq!(x.item(), 1.0);
        assert_eq!(adam.step, 0);
    }
}
