//! Wasserstein GAN with gradient penalty and a spectrally normalized critic.
//! The generator emits min-max scaled columns through `tanh` and a label
//! probability through a sigmoid; two regularizers keep the batch-mean
//! label probability near the training class ratio. Sampled labels are
//! Bernoulli draws from that probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient_penalty, Activation, AdamConfig, AdamState, Mlp, Tape, TensorArchive, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{permutation, rng_from_seed};
use crate::Tensor;

use super::scaling::{ColumnScaler, ScalingKind};
use super::{config_err, EpochLog, LossAccumulator};

/// Probability clamp inside the entropy regularizer.
const ENTROPY_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WganConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_critic: usize,
    pub lambda_gp: f64,
    pub lambda_bal: f64,
    pub lambda_ent: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub spectral_norm: bool,
}

impl Default for WganConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: 128,
            epochs: 100,
            batch_size: 32,
            n_critic: 5,
            lambda_gp: 10.0,
            lambda_bal: 1.0,
            lambda_ent: 0.1,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            spectral_norm: true,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.n_critic == 0 {
            return Err(config_err("WGAN dimensions, batch size and n_critic must be positive"));
        }
        if !(self.lr > 0.0) || self.lambda_gp < 0.0 || self.lambda_bal < 0.0 || self.lambda_ent < 0.0 {
            return Err(config_err("WGAN learning rate must be positive and penalty weights >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct WganModel {
    pub generator: Mlp<f64>,
    pub critic: Mlp<f64>,
    pub scaler: ColumnScaler,
    pub latent_dim: usize,
    pub class_ratio: f64,
}

/// Split raw generator output into `tanh` columns and a sigmoid label.
fn generator_output<'t>(raw: Var<'t, f64>, d: usize) -> Result<(Var<'t, f64>, Var<'t, f64>)> {
    let cols = raw.slice_cols(0, d)?.tanh();
    let label = raw.slice_cols(d, d + 1)?.sigmoid();
    Ok((cols, label))
}

fn latent(rng: &mut impl Rng, n: usize, k: usize) -> Tensor {
    Tensor::randn([n, k], rng)
}

/// Rows of `x` with the label appended as a final column.
fn with_labels(x: &Matrix<f64>, labels: &[u8], rows: &[usize]) -> Tensor {
    let d = x.cols();
    let mut data = Vec::with_capacity(rows.len() * (d + 1));
    for &i in rows {
        data.extend_from_slice(x.row(i));
        data.push(labels[i] as f64);
    }
    Tensor::new([rows.len(), d + 1], data).expect("consistent shape")
}

/// Bernoulli entropy `H(p)` on the tape.
fn entropy<'t>(p: Var<'t, f64>) -> Var<'t, f64> {
    let p = p.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    let q = p.neg().add_scalar(1.0);
    let a = p.mul(p.ln()).expect("scalar");
    let b = q.mul(q.ln()).expect("scalar");
    a.add(b).expect("scalar").neg()
}

/// Cycles through shuffled row orders, reshuffling at each wrap.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn next(&mut self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = permutation(rng, self.order.len());
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Divergence { message, .. } => Error::Divergence { epoch, message },
        other => other,
    }
}

impl WganModel {
    pub fn fit(joint: &Matrix<f64>, labels: &[u8], cfg: &WganConfig, seed: u64) -> Result<(Self, Vec<EpochLog>)> {
        cfg.validate()?;
        let n = joint.rows();
        if n == 0 || labels.len() != n {
            return Err(Error::InsufficientData("WGAN needs labelled rows".into()));
        }
        let d = joint.cols();
        let scaler = ColumnScaler::fit(joint, ScalingKind::MinMax);
        let x = scaler.transform(joint);
        let class_ratio = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;

        let mut rng = rng_from_seed(seed);
        let h = cfg.hidden;
        let mut gen = Mlp::new(&[cfg.latent_dim, h, h, d + 1], Activation::Relu, Activation::Identity, false, &mut rng)?;
        let mut critic = Mlp::new(&[d + 1, h, h, 1], Activation::Relu, Activation::Identity, cfg.spectral_norm, &mut rng)?;
        let adam = AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2);
        let mut g_opt = AdamState::for_params(adam, &gen.params());
        let mut c_opt = AdamState::for_params(adam, &critic.params());
        let mut stream = BatchStream {
            order: permutation(&mut rng, n),
            pos: 0,
        };
        let bs = cfg.batch_size;
        let steps_per_epoch = n.div_ceil(bs);
        let mut log = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            let mut acc = LossAccumulator::default();
            for _ in 0..steps_per_epoch {
                for _ in 0..cfg.n_critic {
                    critic.power_iterate();
                    let real = with_labels(&x, labels, &stream.next(bs, &mut rng));
                    let raw = gen.predict(&latent(&mut rng, bs, cfg.latent_dim))?;
                    let fake = {
                        let tape = Tape::new();
                        let (c, l) = generator_output(tape.leaf(raw), d)?;
                        tape.concat_cols(&[c, l])?.value()
                    };
                    let tape = Tape::new();
                    let cv = critic.register(&tape);
                    let c_real = critic.forward(&cv, tape.leaf(real.clone()))?.mean();
                    let c_fake = critic.forward(&cv, tape.leaf(fake.clone()))?.mean();
                    let gp = gradient_penalty(&critic, &cv, &real, &fake, &mut rng)?;
                    let wdist = c_fake.sub(c_real)?;
                    let loss = wdist.add(gp.scale(cfg.lambda_gp))?;
                    let grads = tape.backward(loss, &cv.all())?;
                    c_opt.step(&mut critic.params_mut(), &grads).map_err(diverged(epoch))?;
                    acc.add("critic_wasserstein", wdist.item());
                    acc.add("critic_gp", gp.item());
                }

                let tape = Tape::new();
                let gv = gen.register(&tape);
                let cv = critic.register(&tape);
                let z = tape.leaf(latent(&mut rng, bs, cfg.latent_dim));
                let (cols, label) = generator_output(gen.forward(&gv, z)?, d)?;
                let fake = tape.concat_cols(&[cols, label])?;
                let adv = critic.forward(&cv, fake)?.mean().neg();
                let p_bar = label.mean();
                let bal = p_bar.add_scalar(-class_ratio).square();
                let ent = entropy(p_bar);
                let loss = adv.add(bal.scale(cfg.lambda_bal))?.sub(ent.scale(cfg.lambda_ent))?;
                let grads = tape.backward(loss, &gv.all())?;
                g_opt.step(&mut gen.params_mut(), &grads).map_err(diverged(epoch))?;
                acc.add("generator_adversarial", adv.item());
                acc.add("generator_balance", bal.item());
                acc.add("generator_entropy", ent.item());
                acc.add("generator_total", loss.item());
                acc.add("label_mean", p_bar.item());
            }
            let entry = acc.finish(epoch)?;
            log::debug!("wgan epoch {epoch}: {:?}", entry.losses);
            log.push(entry);
        }
        Ok((
            Self {
                generator: gen,
                critic,
                scaler,
                latent_dim: cfg.latent_dim,
                class_ratio,
            },
            log,
        ))
    }

    /// Columns in training units; each label is a Bernoulli draw from the
    /// generator's label probability.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<(Matrix<f64>, Vec<u8>)> {
        let d = self.scaler.offset.len();
        if n == 0 {
            return Ok((Matrix::zeros(0, d), Vec::new()));
        }
        let (cols, probs) = self.sample_scaled(n, rng)?;
        let labels = probs.iter().map(|&p| rng.random_bool(p.clamp(0.0, 1.0)) as u8).collect();
        Ok((self.scaler.inverse(&cols), labels))
    }

    /// Scaled columns and raw label probabilities.
    pub fn sample_scaled(&self, n: usize, rng: &mut impl Rng) -> Result<(Matrix<f64>, Vec<f64>)> {
        let d = self.scaler.offset.len();
        let raw = self.generator.predict(&latent(rng, n, self.latent_dim))?;
        let mut cols = Vec::with_capacity(n * d);
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let r = raw.row(i);
            cols.extend(r[..d].iter().map(|v| v.tanh()));
            probs.push(1.0 / (1.0 + (-r[d]).exp()));
        }
        Ok((Matrix::from_vec(n, d, cols)?, probs))
    }

    pub fn store(&self, a: &mut TensorArchive) {
        a.put_mlp("wgan.generator", &self.generator);
        a.put_mlp("wgan.critic", &self.critic);
        self.scaler.store("wgan.scaler", a);
        a.insert_values("wgan.meta", &[self.latent_dim as f64, self.class_ratio]);
    }

    pub fn restore(a: &TensorArchive, cfg: &WganConfig) -> Result<Self> {
        let meta = a.values("wgan.meta")?;
        let generator = a.get_mlp("wgan.generator")?;
        if generator.input_dim() != cfg.latent_dim || meta.first().copied() != Some(cfg.latent_dim as f64) {
            return Err(Error::Checkpoint("WGAN latent size disagrees with its config".into()));
        }
        Ok(Self {
            generator,
            critic: a.get_mlp("wgan.critic")?,
            scaler: ColumnScaler::restore("wgan.scaler", a)?,
            latent_dim: cfg.latent_dim,
            class_ratio: meta.get(1).copied().unwrap_or(0.5),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_matches_closed_form() {
        let tape = Tape::new();
        let h = entropy(tape.scalar(0.25)).item();
        let expect = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((h - expect).abs() < 1e-12);
    }

    #[test]
    fn single_point_data_collapses_to_the_point() {
        // The point repeated to fill ten batches per epoch.
        let point = [0.3, -1.2, 5.0];
        let x = Matrix::from_rows(&vec![point.to_vec(); 320]).unwrap();
        let cfg = WganConfig::default();
        let (m, log) = WganModel::fit(&x, &[1; 320], &cfg, 4).unwrap();
        assert_eq!(log.len(), 100);
        let (s, y) = m.sample(200, &mut rng_from_seed(1)).unwrap();
        let mean_inf: f64 = (0..200)
            .map(|i| s.row(i).iter().zip(&point).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .sum::<f64>()
            / 200.0;
        assert!(mean_inf < 0.1, "{mean_inf}");
        assert!(y.iter().all(|&v| v <= 1));
    }

    #[test]
    fn zero_rows_gives_empty_sample() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cfg = WganConfig {
            epochs: 1,
            hidden: 8,
            ..Default::default()
        };
        let (m, _) = WganModel::fit(&x, &[0, 1], &cfg, 0).unwrap();
        let (s, y) = m.sample(0, &mut rng_from_seed(0)).unwrap();
        assert_eq!((s.rows(), s.cols(), y.len()), (0, 2, 0));
    }

    #[test]
    fn log_records_every_component() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let cfg = WganConfig {
            epochs: 2,
            hidden: 8,
            ..Default::default()
        };
        let (_, log) = WganModel::fit(&x, &[0, 1, 0], &cfg, 0).unwrap();
        for key in [
            "critic_wasserstein",
            "critic_gp",
            "generator_adversarial",
            "generator_balance",
            "generator_entropy",
            "generator_total",
        ] {
            assert!(log[1].losses.contains_key(key), "{key}");
        }
    }
}
