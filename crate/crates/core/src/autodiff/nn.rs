//! Fully connected networks with optional spectral normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Activation::Relu,
            1 => Activation::Identity,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }

    fn apply<'t, T: Scalar>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Identity => x,
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Persistent power-iteration state for spectral normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState<T> {
    /// Left singular vector estimate, length = fan-in.
    pub u: Vec<T>,
    /// Most recent estimate of the largest singular value.
    pub sigma: T,
}

/// Dense layer `act(x W + b)` with `W` stored as `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub activation: Activation,
    pub spectral: Option<SpectralState<T>>,
}

fn normalize<T: Scalar>(v: &mut [T]) -> T {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
    n
}

impl<T: Scalar> Linear<T> {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation, spectral: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = Tensor::uniform([fan_in, fan_out], -bound, bound, rng);
        let bias = Tensor::uniform([1, fan_out], -bound, bound, rng);
        let spectral = spectral.then(|| {
            let mut u: Vec<T> = (0..fan_in).map(|_| T::of(crate::rng::normal(rng))).collect();
            normalize(&mut u);
            SpectralState { u, sigma: T::one() }
        });
        Self {
            weight,
            bias,
            activation,
            spectral,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    /// Right singular vector implied by the current `u`.
    fn right_vector(&self, u: &[T]) -> Vec<T> {
        let [fan_in, fan_out] = self.weight.shape();
        let mut v = vec![T::zero(); fan_out];
        for i in 0..fan_in {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj = *vj + self.weight.get(i, j) * u[i];
            }
        }
        normalize(&mut v);
        v
    }

    /// Run `iters` power iterations on the persistent vector and return the
    /// updated largest-singular-value estimate (floored at 1e-12). A no-op
    /// returning 1 for layers without spectral normalization.
    pub fn spectral_normalize(&mut self, iters: usize) -> T {
        let Some(state) = self.spectral.as_ref() else {
            return T::one();
        };
        let [fan_in, fan_out] = self.weight.shape();
        let mut u = state.u.clone();
        let mut wv = vec![T::zero(); fan_in];
        for _ in 0..iters {
            let v = self.right_vector(&u);
            for (i, w) in wv.iter_mut().enumerate() {
                *w = (0..fan_out).map(|j| self.weight.get(i, j) * v[j]).sum();
            }
            u.copy_from_slice(&wv);
            if normalize(&mut u) == T::zero() {
                u = state.u.clone();
                break;
            }
        }
        let v = self.right_vector(&u);
        let sigma: T = (0..fan_in)
            .map(|i| u[i] * (0..fan_out).map(|j| self.weight.get(i, j) * v[j]).sum::<T>())
            .sum();
        let sigma = sigma.max(T::of(SIGMA_FLOOR));
        self.spectral = Some(SpectralState { u, sigma });
        sigma
    }

    /// Weight used in the forward pass: `W / sigma` under spectral
    /// normalization, `W` otherwise.
    pub fn effective_weight(&self) -> Tensor<T> {
        match &self.spectral {
            Some(s) => self.weight.map(|w| w / s.sigma),
            None => self.weight.clone(),
        }
    }
}

/// Parameters of one [`Linear`] registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LinearVars<'t, T> {
    pub weight: Var<'t, T>,
    pub bias: Var<'t, T>,
}

/// Parameters of an [`Mlp`] registered on a tape, in layer order.
#[derive(Debug, Clone)]
pub struct MlpVars<'t, T> {
    pub layers: Vec<LinearVars<'t, T>>,
}

impl<'t, T: Scalar> MlpVars<'t, T> {
    /// `[w0, b0, w1, b1, ...]`, matching [`Mlp::params_mut`].
    pub fn all(&self) -> Vec<Var<'t, T>> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [input, hidden.., output]`; hidden layers use `hidden`, the
    /// last layer uses `output`.
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        spectral: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Linear::new(dims[k], dims[k + 1], act, spectral, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear<T>>) -> Result<Self> {
        if layers.windows(2).any(|w| w[0].fan_out() != w[1].fan_in()) {
            return Err(Error::Shape("consecutive layer dims disagree".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("empty MLP".into()));
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    /// One power iteration per spectrally normalized layer.
    pub fn power_iterate(&mut self) {
        for l in &mut self.layers {
            l.spectral_normalize(1);
        }
    }

    pub fn register<'t>(&self, tape: &'t Tape<T>) -> MlpVars<'t, T> {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| LinearVars {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(l.bias.clone()),
                })
                .collect(),
        }
    }

    /// Differentiable forward pass. Spectrally normalized layers divide by
    /// `sigma = u^T W v`, recomputed on the tape with `u`, `v` held fixed.
    pub fn forward<'t>(&self, vars: &MlpVars<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let mut h = x;
        for (layer, lv) in self.layers.iter().zip(&vars.layers) {
            let w = match &layer.spectral {
                Some(state) => {
                    let v = layer.right_vector(&state.u);
                    let u = tape.leaf(Tensor::column_vector(state.u.clone()));
                    let v = tape.leaf(Tensor::column_vector(v));
                    let sigma = lv.weight.matmul(v)?.mul(u)?.sum().clamp(T::of(SIGMA_FLOOR), T::infinity());
                    lv.weight.div(sigma.expand(layer.weight.shape())?)?
                }
                None => lv.weight,
            };
            h = layer.activation.apply(h.matmul(w)?.add_bias(lv.bias)?);
        }
        Ok(h)
    }

    /// Forward pass without a tape, using stored spectral estimates.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = h.matmul(&layer.effective_weight())?;
            let n = z.cols();
            for (k, v) in z.data_mut().iter_mut().enumerate() {
                *v = *v + layer.bias.data()[k % n];
            }
            h = match layer.activation {
                Activation::Relu => z.map(|v| v.max(T::zero())),
                Activation::Identity => z,
                Activation::Sigmoid => z.map(|v| T::one() / (T::one() + (-v).exp())),
                Activation::Tanh => z.map(T::tanh),
            };
        }
        Ok(h)
    }

    /// `self = decay * self + (1 - decay) * current`, parameter-wise.
    pub fn ema_update(&mut self, current: &Mlp<T>, decay: T) {
        for (mine, theirs) in self.layers.iter_mut().zip(&current.layers) {
            for (a, b) in [(&mut mine.weight, &theirs.weight), (&mut mine.bias, &theirs.bias)] {
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = decay * *x + (T::one() - decay) * y;
                }
            }
            mine.spectral.clone_from(&theirs.spectral);
        }
    }
}
