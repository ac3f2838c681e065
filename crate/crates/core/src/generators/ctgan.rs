//! Conditional tabular GAN: mode-specific normalization of continuous
//! columns, a label-conditioned generator, and a WGAN-GP discriminator that
//! sees rows together with their condition vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce, gradient_penalty, Activation, AdamConfig, AdamState, Mlp, Tape, TensorArchive, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;
use crate::Tensor;

use super::{config_err, EpochLog, LossAccumulator};

/// Standard deviation assigned to the single mode of a constant column.
pub const CONSTANT_MODE_STD: f64 = 1e-6;
/// Within-mode scalars are `(x - mu) / (ALPHA_SPAN * sigma)`.
const ALPHA_SPAN: f64 = 4.0;
/// Component standard deviations are floored at this fraction of the
/// column's overall standard deviation.
const STD_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtganConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub n_critic: usize,
    pub lambda_gp: f64,
    pub gmm_modes: usize,
    pub em_iters: usize,
    pub em_tol: f64,
    pub gumbel_tau: f64,
}

impl Default for CtganConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden: 256,
            epochs: 300,
            batch_size: 500,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            n_critic: 1,
            lambda_gp: 10.0,
            gmm_modes: 5,
            em_iters: 100,
            em_tol: 1e-6,
            gumbel_tau: 0.2,
        }
    }
}

impl CtganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.n_critic == 0 || self.gmm_modes == 0 {
            return Err(config_err("CTGAN dimensions, batch size, n_critic and modes must be positive"));
        }
        if !(self.lr > 0.0 && self.gumbel_tau > 0.0 && self.em_tol >= 0.0 && self.lambda_gp >= 0.0) {
            return Err(config_err("CTGAN needs lr > 0, gumbel_tau > 0, em_tol >= 0 and lambda_gp >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Log of `w_k N(x | mu_k, sigma_k)` for every component.
    fn log_joint(&self, x: f64) -> Vec<f64> {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        (0..self.k())
            .map(|c| {
                let z = (x - self.means[c]) / self.stds[c];
                self.weights[c].max(1e-300).ln() - self.stds[c].ln() - half_ln_2pi - 0.5 * z * z
            })
            .collect()
    }

    /// Most probable component for `x`.
    pub fn mode_of(&self, x: f64) -> usize {
        let lj = self.log_joint(x);
        (0..lj.len()).fold(0, |best, c| if lj[c] > lj[best] { c } else { best })
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// EM fit of a `k`-component mixture, initialized at evenly spaced
/// quantiles. Stops when the mean log-likelihood changes by less than `tol`.
/// Columns with a single distinct value get one mode of std 1e-6.
pub fn fit_gmm(x: &[f64], k: usize, max_iter: usize, tol: f64) -> Gmm {
    let n = x.len();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let distinct = sorted.len();
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    if distinct <= 1 || !(sd > 0.0) {
        return Gmm {
            weights: vec![1.0],
            means: vec![x.first().copied().unwrap_or(0.0)],
            stds: vec![CONSTANT_MODE_STD],
        };
    }
    let k = k.min(distinct).max(1);
    let floor = STD_FLOOR_FRACTION * sd;
    let mut all = x.to_vec();
    all.sort_by(f64::total_cmp);
    let mut g = Gmm {
        weights: vec![1.0 / k as f64; k],
        means: (0..k).map(|c| all[(((c as f64 + 0.5) / k as f64) * n as f64) as usize % n]).collect(),
        stds: vec![sd / k as f64; k],
    };
    g.stds.iter_mut().for_each(|s| *s = s.max(floor));

    let mut prev = f64::NEG_INFINITY;
    let mut resp = vec![0.0; n * k];
    for _ in 0..max_iter {
        let mut ll = 0.0;
        for (i, &v) in x.iter().enumerate() {
            let lj = g.log_joint(v);
            let lse = log_sum_exp(&lj);
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (lj[c] - lse).exp();
            }
        }
        ll /= n as f64;
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk < 1e-10 {
                g.weights[c] = 0.0;
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + c] * x[i]).sum::<f64>() / nk;
            let var = (0..n).map(|i| resp[i * k + c] * (x[i] - mu).powi(2)).sum::<f64>() / nk;
            g.weights[c] = nk / n as f64;
            g.means[c] = mu;
            g.stds[c] = var.sqrt().max(floor);
        }
        if (ll - prev).abs() < tol {
            break;
        }
        prev = ll;
    }
    g
}

/// Mode-specific normalization of every column: a one-hot mode indicator
/// plus the within-mode scalar `(x - mu) / (4 sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeEncoder {
    pub columns: Vec<Gmm>,
}

impl ModeEncoder {
    pub fn fit(x: &Matrix<f64>, k: usize, max_iter: usize, tol: f64) -> Self {
        Self {
            columns: (0..x.cols()).map(|j| fit_gmm(&x.column(j), k, max_iter, tol)).collect(),
        }
    }

    /// Encoded width: one scalar plus `k_j` indicators per column.
    pub fn width(&self) -> usize {
        self.columns.iter().map(|g| 1 + g.k()).sum()
    }

    pub fn encode(&self, x: &Matrix<f64>) -> Matrix<f64> {
        let w = self.width();
        let mut out = Vec::with_capacity(x.rows() * w);
        for row in x.iter_rows() {
            for (v, g) in row.iter().zip(&self.columns) {
                let m = g.mode_of(*v);
                out.push((v - g.means[m]) / (ALPHA_SPAN * g.stds[m]));
                out.extend((0..g.k()).map(|c| (c == m) as u8 as f64));
            }
        }
        Matrix::from_vec(x.rows(), w, out).expect("consistent shape")
    }

    /// Inverse of [`encode`](Self::encode); the mode is the argmax of each
    /// indicator block.
    pub fn decode(&self, enc: &Matrix<f64>) -> Result<Matrix<f64>> {
        if enc.cols() != self.width() {
            return Err(Error::Dimension {
                expected: self.width(),
                got: enc.cols(),
            });
        }
        let d = self.columns.len();
        let mut out = Vec::with_capacity(enc.rows() * d);
        for row in enc.iter_rows() {
            let mut off = 0;
            for g in &self.columns {
                let alpha = row[off];
                let block = &row[off + 1..off + 1 + g.k()];
                let m = (0..g.k()).fold(0, |b, c| if block[c] > block[b] { c } else { b });
                out.push(alpha * ALPHA_SPAN * g.stds[m] + g.means[m]);
                off += 1 + g.k();
            }
        }
        Matrix::from_vec(enc.rows(), d, out)
    }
}

#[derive(Debug, Clone)]
pub struct CtganModel {
    pub generator: Mlp<f64>,
    pub discriminator: Mlp<f64>,
    pub encoder: ModeEncoder,
    pub latent_dim: usize,
    /// Empirical class frequencies, used when no label is requested.
    pub class_freq: [f64; 2],
    pub gumbel_tau: f64,
}

fn one_hot(labels: &[u8]) -> Tensor {
    let mut data = Vec::with_capacity(labels.len() * 2);
    for &y in labels {
        data.push((y == 0) as u8 as f64);
        data.push((y == 1) as u8 as f64);
    }
    Tensor::new([labels.len(), 2], data).expect("consistent shape")
}

/// Row-wise softmax of `(logits + gumbel) / tau` on the tape.
fn gumbel_softmax<'t>(logits: Var<'t, f64>, tau: f64, rng: &mut impl Rng) -> Result<Var<'t, f64>> {
    let tape = logits.tape();
    let [m, k] = logits.shape();
    let g: Vec<f64> = (0..m * k)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    let z = logits.add(tape.leaf(Tensor::new([m, k], g)?))?.scale(1.0 / tau);
    let zv = z.value();
    let shift: Vec<f64> = (0..m)
        .map(|i| zv.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let e = z.sub(tape.leaf(Tensor::column_vector(shift)).broadcast_cols(k)?)?.exp();
    e.div(e.sum_cols().broadcast_cols(k)?)
}

impl CtganModel {
    fn activate<'t>(&self, raw: Var<'t, f64>, rng: &mut impl Rng) -> Result<(Var<'t, f64>, Var<'t, f64>)> {
        let mut parts = Vec::with_capacity(2 * self.encoder.columns.len());
        let mut off = 0;
        for g in &self.encoder.columns {
            parts.push(raw.slice_cols(off, off + 1)?.tanh());
            parts.push(gumbel_softmax(raw.slice_cols(off + 1, off + 1 + g.k())?, self.gumbel_tau, rng)?);
            off += 1 + g.k();
        }
        let label = raw.slice_cols(off, off + 1)?.sigmoid();
        parts.push(label);
        Ok((raw.tape().concat_cols(&parts)?, label))
    }

    fn latent_with(&self, cond: &Tensor, rng: &mut impl Rng) -> Tensor {
        let n = cond.rows();
        let mut data = Vec::with_capacity(n * (self.latent_dim + 2));
        for i in 0..n {
            data.extend((0..self.latent_dim).map(|_| crate::rng::normal(rng)));
            data.extend_from_slice(cond.row(i));
        }
        Tensor::new([n, self.latent_dim + 2], data).expect("consistent shape")
    }

    pub fn fit(joint: &Matrix<f64>, labels: &[u8], cfg: &CtganConfig, seed: u64) -> Result<(Self, Vec<EpochLog>)> {
        cfg.validate()?;
        let n = joint.rows();
        if labels.len() != n {
            return Err(Error::Dimension { expected: n, got: labels.len() });
        }
        let by_class: [Vec<usize>; 2] = [0u8, 1].map(|c| (0..n).filter(|&i| labels[i] == c).collect());
        if by_class.iter().any(|v| v.len() < 2) {
            return Err(Error::InsufficientData("CTGAN needs at least 2 rows per class".into()));
        }
        let encoder = ModeEncoder::fit(joint, cfg.gmm_modes, cfg.em_iters, cfg.em_tol);
        let enc = encoder.encode(joint);
        let w = encoder.width();
        let counts = by_class.each_ref().map(|v| v.len() as f64);
        let log_freq = counts.map(|c| (c + 1.0).ln());
        let p_cond1 = log_freq[1] / (log_freq[0] + log_freq[1]);

        let mut rng = rng_from_seed(seed);
        let h = cfg.hidden;
        let generator = Mlp::new(&[cfg.latent_dim + 2, h, h, w + 1], Activation::Relu, Activation::Identity, false, &mut rng)?;
        let discriminator = Mlp::new(&[w + 1 + 2, h, h, 1], Activation::Relu, Activation::Identity, false, &mut rng)?;
        let mut model = Self {
            generator,
            discriminator,
            encoder,
            latent_dim: cfg.latent_dim,
            class_freq: [counts[0] / n as f64, counts[1] / n as f64],
            gumbel_tau: cfg.gumbel_tau,
        };
        let adam = AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2);
        let mut g_opt = AdamState::for_params(adam, &model.generator.params());
        let mut d_opt = AdamState::for_params(adam, &model.discriminator.params());
        let bs = cfg.batch_size.min(n);
        let steps = (n / bs).max(1);
        let mut log = Vec::with_capacity(cfg.epochs);
        let diverged = |epoch: usize| {
            move |e| match e {
                Error::Divergence { message, .. } => Error::Divergence { epoch, message },
                other => other,
            }
        };

        for epoch in 0..cfg.epochs {
            let mut acc = LossAccumulator::default();
            for _ in 0..steps {
                for _ in 0..cfg.n_critic {
                    let conds: Vec<u8> = (0..bs).map(|_| rng.random_bool(p_cond1) as u8).collect();
                    let cond = one_hot(&conds);
                    let mut real = Vec::with_capacity(bs * (w + 3));
                    for (&c, row) in conds.iter().zip(0..) {
                        let pool = &by_class[c as usize];
                        let i = pool[rng.random_range(0..pool.len())];
                        real.extend_from_slice(enc.row(i));
                        real.push(c as f64);
                        real.extend_from_slice(cond.row(row));
                    }
                    let real = Tensor::new([bs, w + 3], real)?;
                    let fake = {
                        let tape = Tape::new();
                        let raw = tape.leaf(model.generator.predict(&model.latent_with(&cond, &mut rng))?);
                        let (row, _) = model.activate(raw, &mut rng)?;
                        tape.concat_cols(&[row, tape.leaf(cond.clone())])?.value()
                    };
                    let tape = Tape::new();
                    let dv = model.discriminator.register(&tape);
                    let d_real = model.discriminator.forward(&dv, tape.leaf(real.clone()))?.mean();
                    let d_fake = model.discriminator.forward(&dv, tape.leaf(fake.clone()))?.mean();
                    let gp = gradient_penalty(&model.discriminator, &dv, &real, &fake, &mut rng)?;
                    let wdist = d_fake.sub(d_real)?;
                    let loss = wdist.add(gp.scale(cfg.lambda_gp))?;
                    let grads = tape.backward(loss, &dv.all())?;
                    d_opt
                        .step(&mut model.discriminator.params_mut(), &grads)
                        .map_err(diverged(epoch))?;
                    acc.add("critic_wasserstein", wdist.item());
                    acc.add("critic_gp", gp.item());
                }

                let conds: Vec<u8> = (0..bs).map(|_| rng.random_bool(p_cond1) as u8).collect();
                let cond = one_hot(&conds);
                let tape = Tape::new();
                let gv = model.generator.register(&tape);
                let dv = model.discriminator.register(&tape);
                let z = tape.leaf(model.latent_with(&cond, &mut rng));
                let (row, label) = model.activate(model.generator.forward(&gv, z)?, &mut rng)?;
                let input = tape.concat_cols(&[row, tape.leaf(cond.clone())])?;
                let adv = model.discriminator.forward(&dv, input)?.mean().neg();
                let target = tape.leaf(Tensor::column_vector(conds.iter().map(|&c| c as f64).collect()));
                let ce = bce(label, target)?;
                let loss = adv.add(ce)?;
                let grads = tape.backward(loss, &gv.all())?;
                g_opt.step(&mut model.generator.params_mut(), &grads).map_err(diverged(epoch))?;
                acc.add("generator_adversarial", adv.item());
                acc.add("generator_condition_ce", ce.item());
            }
            let entry = acc.finish(epoch)?;
            log::debug!("ctgan epoch {epoch}: {:?}", entry.losses);
            log.push(entry);
        }
        Ok((model, log))
    }

    /// Decoded rows with label `label`, or with labels drawn from the
    /// empirical class frequencies when `label` is `None`.
    pub fn sample(&self, n: usize, label: Option<u8>, rng: &mut impl Rng) -> Result<(Matrix<f64>, Vec<u8>)> {
        let d = self.encoder.columns.len();
        if n == 0 {
            return Ok((Matrix::zeros(0, d), Vec::new()));
        }
        if label.is_some_and(|y| y > 1) {
            return Err(Error::InvalidArgument("label must be 0 or 1".into()));
        }
        let labels: Vec<u8> = match label {
            Some(y) => vec![y; n],
            None => (0..n).map(|_| rng.random_bool(self.class_freq[1]) as u8).collect(),
        };
        let cond = one_hot(&labels);
        let raw = self.generator.predict(&self.latent_with(&cond, rng))?;
        let w = self.encoder.width();
        let mut enc = Vec::with_capacity(n * w);
        for i in 0..n {
            let r = raw.row(i);
            let mut off = 0;
            for g in &self.encoder.columns {
                enc.push(r[off].tanh());
                enc.extend_from_slice(&r[off + 1..off + 1 + g.k()]);
                off += 1 + g.k();
            }
        }
        let decoded = self.encoder.decode(&Matrix::from_vec(n, w, enc)?)?;
        Ok((decoded, labels))
    }

    pub fn store(&self, a: &mut TensorArchive) {
        a.put_mlp("ctgan.generator", &self.generator);
        a.put_mlp("ctgan.discriminator", &self.discriminator);
        a.insert_values(
            "ctgan.meta",
            &[
                self.latent_dim as f64,
                self.class_freq[0],
                self.class_freq[1],
                self.gumbel_tau,
                self.encoder.columns.len() as f64,
            ],
        );
        for (j, g) in self.encoder.columns.iter().enumerate() {
            let mut v = g.weights.clone();
            v.extend(&g.means);
            v.extend(&g.stds);
            a.insert_values(format!("ctgan.gmm.{j}"), &v);
        }
    }

    pub fn restore(a: &TensorArchive, cfg: &CtganConfig) -> Result<Self> {
        let meta = a.values("ctgan.meta")?;
        if meta.len() != 5 || meta[0] as usize != cfg.latent_dim {
            return Err(Error::Checkpoint("CTGAN metadata disagrees with its config".into()));
        }
        let columns = (0..meta[4] as usize)
            .map(|j| {
                let v = a.values(&format!("ctgan.gmm.{j}"))?;
                if v.len() % 3 != 0 || v.is_empty() {
                    return Err(Error::Checkpoint(format!("ctgan.gmm.{j} is malformed")));
                }
                let k = v.len() / 3;
                Ok(Gmm {
                    weights: v[..k].to_vec(),
                    means: v[k..2 * k].to_vec(),
                    stds: v[2 * k..].to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            generator: a.get_mlp("ctgan.generator")?,
            discriminator: a.get_mlp("ctgan.discriminator")?,
            encoder: ModeEncoder { columns },
            latent_dim: cfg.latent_dim,
            class_freq: [meta[1], meta[2]],
            gumbel_tau: meta[3],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    #[test]
    fn bimodal_column_recovers_both_modes() {
        let mut rng = rng_from_seed(1);
        let x: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { -2.0 } else { 2.0 } + 0.1 * normal(&mut rng))
            .collect();
        let g = fit_gmm(&x, 5, 100, 1e-6);
        // Both true modes carry a heavy component within 0.2.
        for target in [-2.0, 2.0] {
            let mass: f64 = (0..g.k())
                .filter(|&c| (g.means[c] - target).abs() < 0.2)
                .map(|c| g.weights[c])
                .sum();
            assert!(mass > 0.45, "mass near {target}: {mass} ({g:?})");
        }
        let g2 = fit_gmm(&x, 2, 100, 1e-6);
        let mut m = g2.means.clone();
        m.sort_by(f64::total_cmp);
        assert!((m[0] + 2.0).abs() < 0.2 && (m[1] - 2.0).abs() < 0.2, "{m:?}");
    }

    #[test]
    fn constant_column_is_single_mode() {
        let g = fit_gmm(&[3.0; 20], 5, 100, 1e-6);
        assert_eq!(g.k(), 1);
        assert_eq!(g.stds[0], CONSTANT_MODE_STD);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = rng_from_seed(2);
        let data: Vec<f64> = (0..300)
            .map(|i| match i % 3 {
                0 => 5.0 * normal(&mut rng),
                1 => 7.0,
                _ => (normal(&mut rng) * 3.0).exp(),
            })
            .collect();
        let x = Matrix::from_vec(100, 3, data).unwrap();
        let e = ModeEncoder::fit(&x, 5, 100, 1e-6);
        let back = e.decode(&e.encode(&x)).unwrap();
        let err = x
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conditional_sampling_honours_the_label() {
        let mut rng = rng_from_seed(3);
        let n = 40;
        let data: Vec<f64> = (0..2 * n).map(|_| normal(&mut rng)).collect();
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let y: Vec<u8> = (0..n).map(|i| (i % 4 == 0) as u8).collect();
        let cfg = CtganConfig {
            epochs: 2,
            hidden: 16,
            latent_dim: 8,
            ..Default::default()
        };
        let (m, log) = CtganModel::fit(&x, &y, &cfg, 4).unwrap();
        assert_eq!(log.len(), 2);
        let (s, labels) = m.sample(100, Some(1), &mut rng_from_seed(5)).unwrap();
        assert_eq!(s.rows(), 100);
        assert!(labels.iter().all(|&v| v == 1));
        assert!(s.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gumbel_softmax_rows_sum_to_one() {
        let tape = Tape::new();
        let l = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 50.0]]).unwrap());
        let s = gumbel_softmax(l, 0.2, &mut rng_from_seed(0)).unwrap().value();
        for i in 0..2 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_class_is_rejected() {
        let x = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = CtganConfig::default();
        assert!(CtganModel::fit(&x, &[1, 0, 0, 0, 0], &cfg, 0).is_err());
    }
}
