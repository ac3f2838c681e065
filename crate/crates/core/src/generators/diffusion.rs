//! Denoising diffusion on standardized columns with a learned time
//! embedding, a noise-prediction head and a class-logit head. Sampling runs
//! the deterministic DDIM reverse process with EMA weights.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce, mse, Activation, AdamConfig, AdamState, Mlp, MlpVars, Tape, TensorArchive, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{normal, permutation, rng_from_seed};
use crate::Tensor;

use super::scaling::{ColumnScaler, ScalingKind};
use super::{config_err, EpochLog, LossAccumulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub time_embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_decay: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            time_embed_dim: 16,
            hidden: 128,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            ema_decay: 0.999,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 || self.time_embed_dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(config_err("diffusion needs timesteps >= 2 and positive dimensions"));
        }
        if !(0.0 < self.beta_start && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(config_err("diffusion needs 0 < beta_start < beta_end < 1"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(config_err("diffusion needs lr > 0 and ema_decay in [0, 1)"));
        }
        Ok(())
    }
}

/// Cumulative products `alpha_bar_t = prod_{s <= t} (1 - beta_s)` of a
/// linear beta schedule.
pub fn alpha_bars(timesteps: usize, beta_start: f64, beta_end: f64) -> Vec<f64> {
    let mut acc = 1.0;
    (0..timesteps)
        .map(|t| {
            let frac = if timesteps > 1 { t as f64 / (timesteps - 1) as f64 } else { 0.0 };
            acc *= 1.0 - (beta_start + frac * (beta_end - beta_start));
            acc
        })
        .collect()
}

/// `x_0 = (x_t - sqrt(1 - a) eps) / sqrt(a)` for `a = alpha_bar_t`.
pub fn invert_forward(x_t: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.iter().zip(eps).map(|(x, e)| (x - sb * e) / sa).collect()
}

/// Trunk, heads and time embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub embedding: Tensor,
    pub trunk: Mlp<f64>,
    pub eps_head: Mlp<f64>,
    pub class_head: Mlp<f64>,
}

struct NetVars<'t> {
    embedding: Var<'t, f64>,
    trunk: MlpVars<'t, f64>,
    eps_head: MlpVars<'t, f64>,
    class_head: MlpVars<'t, f64>,
}

impl<'t> NetVars<'t> {
    fn all(&self) -> Vec<Var<'t, f64>> {
        let mut v = vec![self.embedding];
        v.extend(self.trunk.all());
        v.extend(self.eps_head.all());
        v.extend(self.class_head.all());
        v
    }
}

impl DenoiserNet {
    fn new(d: usize, cfg: &DiffusionConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            embedding: Tensor::randn([cfg.timesteps, cfg.time_embed_dim], rng),
            trunk: Mlp::new(&[d + cfg.time_embed_dim, h, h], Activation::Relu, Activation::Relu, false, rng)?,
            eps_head: Mlp::new(&[h, d], Activation::Identity, Activation::Identity, false, rng)?,
            class_head: Mlp::new(&[h, 1], Activation::Identity, Activation::Identity, false, rng)?,
        })
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embedding];
        v.extend(self.trunk.params());
        v.extend(self.eps_head.params());
        v.extend(self.class_head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.trunk.params_mut());
        v.extend(self.eps_head.params_mut());
        v.extend(self.class_head.params_mut());
        v
    }

    fn register<'t>(&self, tape: &'t Tape<f64>) -> NetVars<'t> {
        NetVars {
            embedding: tape.leaf(self.embedding.clone()),
            trunk: self.trunk.register(tape),
            eps_head: self.eps_head.register(tape),
            class_head: self.class_head.register(tape),
        }
    }

    /// Predicted noise and class logit on the tape.
    fn forward<'t>(&self, v: &NetVars<'t>, x_t: Var<'t, f64>, t: Rc<[usize]>) -> Result<(Var<'t, f64>, Var<'t, f64>)> {
        let emb = v.embedding.gather_rows(t);
        let h = self.trunk.forward(&v.trunk, x_t.tape().concat_cols(&[x_t, emb])?)?;
        Ok((self.eps_head.forward(&v.eps_head, h)?, self.class_head.forward(&v.class_head, h)?))
    }

    /// Tape-free forward pass at a single time step for all rows.
    fn predict(&self, x_t: &Tensor, t: usize) -> Result<(Tensor, Tensor)> {
        let [n, d] = x_t.shape();
        let e = self.embedding.row(t);
        let mut input = Vec::with_capacity(n * (d + e.len()));
        for i in 0..n {
            input.extend_from_slice(x_t.row(i));
            input.extend_from_slice(e);
        }
        let h = self.trunk.predict(&Tensor::new([n, d + e.len()], input)?)?;
        Ok((self.eps_head.predict(&h)?, self.class_head.predict(&h)?))
    }

    /// `self = decay * self + (1 - decay) * current`.
    pub fn ema_update(&mut self, current: &DenoiserNet, decay: f64) {
        for (a, &b) in self.embedding.data_mut().iter_mut().zip(current.embedding.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
        self.trunk.ema_update(&current.trunk, decay);
        self.eps_head.ema_update(&current.eps_head, decay);
        self.class_head.ema_update(&current.class_head, decay);
    }
}

/// EMA decay at optimizer step `step` (0-based): the configured decay,
/// capped by `(1 + step) / (10 + step)` so early averages are not dominated
/// by the random initialization.
pub fn ema_decay_at(decay: f64, step: usize) -> f64 {
    decay.min((1.0 + step as f64) / (10.0 + step as f64))
}

#[derive(Debug, Clone)]
pub struct DiffusionModel {
    /// Weights used for sampling.
    pub ema: DenoiserNet,
    pub alpha_bars: Vec<f64>,
    pub scaler: ColumnScaler,
}

impl DiffusionModel {
    pub fn fit(joint: &Matrix<f64>, labels: &[u8], cfg: &DiffusionConfig, seed: u64) -> Result<(Self, Vec<EpochLog>)> {
        cfg.validate()?;
        let n = joint.rows();
        if n == 0 || labels.len() != n {
            return Err(Error::InsufficientData("diffusion needs labelled rows".into()));
        }
        let d = joint.cols();
        let scaler = ColumnScaler::fit(joint, ScalingKind::ZScore);
        let x0 = scaler.transform(joint);
        let abar = alpha_bars(cfg.timesteps, cfg.beta_start, cfg.beta_end);

        let mut rng = rng_from_seed(seed);
        let mut net = DenoiserNet::new(d, cfg, &mut rng)?;
        let mut ema = net.clone();
        let mut opt = AdamState::for_params(AdamConfig::new(cfg.lr, 0.9, 0.999), &net.params());
        let mut log = Vec::with_capacity(cfg.epochs);
        let mut step = 0usize;

        for epoch in 0..cfg.epochs {
            let mut acc = LossAccumulator::default();
            let order = permutation(&mut rng, n);
            for chunk in order.chunks(cfg.batch_size) {
                let b = chunk.len();
                let ts: Vec<usize> = (0..b).map(|_| rng.random_range(0..cfg.timesteps)).collect();
                let mut xt = Vec::with_capacity(b * d);
                let mut eps = Vec::with_capacity(b * d);
                for (&i, &t) in chunk.iter().zip(&ts) {
                    let (sa, sb) = (abar[t].sqrt(), (1.0 - abar[t]).sqrt());
                    for &v in x0.row(i) {
                        let e = normal(&mut rng);
                        eps.push(e);
                        xt.push(sa * v + sb * e);
                    }
                }
                let y: Vec<f64> = chunk.iter().map(|&i| labels[i] as f64).collect();

                let tape = Tape::new();
                let vars = net.register(&tape);
                let (eps_hat, logit) = net.forward(&vars, tape.leaf(Tensor::new([b, d], xt)?), ts.into())?;
                let denoise = mse(eps_hat, tape.leaf(Tensor::new([b, d], eps)?))?;
                let class = bce(logit.sigmoid(), tape.leaf(Tensor::column_vector(y)))?;
                let loss = denoise.add(class)?;
                let grads = tape.backward(loss, &vars.all())?;
                opt.step(&mut net.params_mut(), &grads).map_err(|e| match e {
                    Error::Divergence { message, .. } => Error::Divergence { epoch, message },
                    other => other,
                })?;
                ema.ema_update(&net, ema_decay_at(cfg.ema_decay, step));
                step += 1;
                acc.add("denoise_mse", denoise.item());
                acc.add("class_bce", class.item());
                acc.add("total", loss.item());
            }
            let entry = acc.finish(epoch)?;
            log::debug!("diffusion epoch {epoch}: {:?}", entry.losses);
            log.push(entry);
        }
        Ok((
            Self {
                ema,
                alpha_bars: abar,
                scaler,
            },
            log,
        ))
    }

    /// DDIM (eta = 0) from `x_T ~ N(0, I)`; labels from the class head at
    /// `t = 0` applied to the final sample.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(Matrix<f64>, Vec<u8>)> {
        let d = self.scaler.offset.len();
        if n == 0 {
            return Ok((Matrix::zeros(0, d), Vec::new()));
        }
        let mut x = Tensor::randn([n, d], rng);
        for t in (0..self.alpha_bars.len()).rev() {
            let (eps, _) = self.ema.predict(&x, t)?;
            let a = self.alpha_bars[t];
            let a_prev = if t > 0 { self.alpha_bars[t - 1] } else { 1.0 };
            let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
            let (spa, spb) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
            x = x.zip_map(&eps, |xv, e| spa * (xv - sb * e) / sa + spb * e);
        }
        let (_, logit) = self.ema.predict(&x, 0)?;
        let labels = logit.data().iter().map(|&z| (z > 0.0) as u8).collect();
        let m = Matrix::from_vec(n, d, x.into_data())?;
        Ok((self.scaler.inverse(&m), labels))
    }

    pub fn store(&self, a: &mut TensorArchive) {
        a.insert("diffusion.embedding", &self.ema.embedding);
        a.put_mlp("diffusion.trunk", &self.ema.trunk);
        a.put_mlp("diffusion.eps_head", &self.ema.eps_head);
        a.put_mlp("diffusion.class_head", &self.ema.class_head);
        a.insert_values("diffusion.alpha_bars", &self.alpha_bars);
        self.scaler.store("diffusion.scaler", a);
    }

    pub fn restore(a: &TensorArchive, cfg: &DiffusionConfig) -> Result<Self> {
        let alpha_bars = a.values("diffusion.alpha_bars")?;
        if alpha_bars.len() != cfg.timesteps {
            return Err(Error::Checkpoint("diffusion step count disagrees with its config".into()));
        }
        Ok(Self {
            ema: DenoiserNet {
                embedding: a.get("diffusion.embedding")?,
                trunk: a.get_mlp("diffusion.trunk")?,
                eps_head: a.get_mlp("diffusion.eps_head")?,
                class_head: a.get_mlp("diffusion.class_head")?,
            },
            alpha_bars,
            scaler: ColumnScaler::restore("diffusion.scaler", a)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_strictly_decreasing_from_near_one() {
        let a = alpha_bars(100, 1e-4, 0.02);
        assert!(a[0] > 0.99);
        assert!(a.windows(2).all(|w| w[1] < w[0]));
        assert!(a[99] > 0.0);
    }

    #[test]
    fn forward_process_inverts_exactly() {
        let a = alpha_bars(100, 1e-4, 0.02);
        let mut rng = rng_from_seed(1);
        for t in [0, 17, 99] {
            let x0: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
            let eps: Vec<f64> = (0..6).map(|_| normal(&mut rng)).collect();
            let xt: Vec<f64> = x0.iter().zip(&eps).map(|(x, e)| a[t].sqrt() * x + (1.0 - a[t]).sqrt() * e).collect();
            let back = invert_forward(&xt, &eps, a[t]);
            for (p, q) in back.iter().zip(&x0) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ema_with_zero_decay_tracks_current_weights() {
        let cfg = DiffusionConfig {
            hidden: 8,
            ..Default::default()
        };
        let mut rng = rng_from_seed(2);
        let a = DenoiserNet::new(3, &cfg, &mut rng).unwrap();
        let mut b = DenoiserNet::new(3, &cfg, &mut rng).unwrap();
        b.ema_update(&a, ema_decay_at(0.0, 500));
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.2], vec![0.1, 0.9]]).unwrap();
        let cfg = DiffusionConfig {
            epochs: 3,
            hidden: 16,
            ..Default::default()
        };
        let (m, log) = DiffusionModel::fit(&x, &[0, 1, 0, 1], &cfg, 3).unwrap();
        assert_eq!(log.len(), 3);
        let a = m.sample(20, &mut rng_from_seed(5)).unwrap();
        let b = m.sample(20, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert!(a.0.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn learns_a_two_cluster_table() {
        let mut rng = rng_from_seed(4);
        let n = 300;
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 4 == 0) as u8;
            let mu = if c == 1 { 3.0 } else { -1.0 };
            data.push(mu + 0.3 * normal(&mut rng));
            data.push(-mu + 0.3 * normal(&mut rng));
            y.push(c);
        }
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let cfg = DiffusionConfig {
            epochs: 40,
            ..Default::default()
        };
        let (m, _) = DiffusionModel::fit(&x, &y, &cfg, 5).unwrap();
        let (s, sy) = m.sample(400, &mut rng_from_seed(6)).unwrap();
        let ratio = sy.iter().map(|&v| v as f64).sum::<f64>() / 400.0;
        assert!((ratio - 0.25).abs() < 0.1, "{ratio}");
        // Labels agree with the cluster the sample landed in.
        let agree = (0..400).filter(|&i| (s[(i, 0)] > 1.0) == (sy[i] == 1)).count();
        assert!(agree > 360, "{agree}");
    }
}
