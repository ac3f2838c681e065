//! Reconstruction of the secret column from released features.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regressors::{fit_regressor, RegressorKind};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng::{derive_seed, permutation, rng_from_seed, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Fraction of the real table held out for scoring.
    pub test_fraction: f64,
    /// Secret permutations averaged in the noise baseline.
    pub noise_repeats: usize,
    pub regressors: Vec<RegressorKind>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.3,
            noise_repeats: 20,
            regressors: RegressorKind::ALL.to_vec(),
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("recon: test_fraction must lie in (0, 1)".into()));
        }
        if self.noise_repeats == 0 {
            return Err(Error::Config("recon: noise_repeats must be positive".into()));
        }
        if self.regressors.is_empty() {
            return Err(Error::Config("recon: need at least one regressor".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorScore {
    pub model: RegressorKind,
    pub mse: f64,
    pub pearson: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconResult {
    pub best_model: RegressorKind,
    /// Test MSE of the best regressor trained on the released table.
    pub mse: f64,
    pub pearson: f64,
    pub r2: f64,
    pub privacy_gap: f64,
    pub prs: f64,
    pub mse_noise: f64,
    pub mse_real: f64,
    pub sweep: Vec<RegressorScore>,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Baselines that depend only on the real table and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconBaseline {
    pub test_idx: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub mse_real: f64,
    pub mse_noise: f64,
    pub noise_runs: Vec<f64>,
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Coefficient of determination of `pred` for `truth`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let m = truth.iter().sum::<f64>() / truth.len() as f64;
    let sst: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    let sse: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    if sst == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - sse / sst
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn check_secret(t: &FeatureTable, what: &str) -> Result<()> {
    if t.secret.len() != t.n() {
        return Err(Error::MissingColumn(format!("{} in {what} table", crate::features::SECRET_NAME)));
    }
    if t.secret.iter().chain(t.features.as_slice()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} table has non-finite values")));
    }
    Ok(())
}

/// Every configured regressor fitted on `train`, scored on `test`.
fn sweep(train: &FeatureTable, test: &FeatureTable, kinds: &[RegressorKind], seed: u64) -> Result<Vec<RegressorScore>> {
    kinds
        .iter()
        .map(|&kind| {
            let model = fit_regressor(kind, &train.features, &train.secret, derive_seed(seed, &[tag(kind.name())]))?;
            let pred = model.predict(&test.features)?;
            Ok(RegressorScore {
                model: kind,
                mse: mse(&pred, &test.secret),
                pearson: pearson(&pred, &test.secret),
                r2: r_squared(&test.secret, &pred),
            })
        })
        .collect()
}

fn best(scores: &[RegressorScore]) -> &RegressorScore {
    scores
        .iter()
        .reduce(|a, b| if b.mse < a.mse { b } else { a })
        .expect("non-empty sweep")
}

/// Split the real table and compute the real-data and noise baselines.
/// `mse_real` is a random forest trained on the real training split;
/// `mse_noise` averages, over secret permutations of the training split, the
/// best sweep MSE on the test split.
pub fn recon_baseline(real: &FeatureTable, cfg: &ReconConfig, seed: u64) -> Result<ReconBaseline> {
    cfg.validate()?;
    check_secret(real, "real")?;
    let n = real.n();
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    if n_test < 2 || n - n_test < 2 {
        return Err(Error::InsufficientData(format!("reconstruction needs more than {n} real rows")));
    }
    let order = permutation(&mut rng_from_seed(derive_seed(seed, &[tag("recon-split")])), n);
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let train = real.select(&train_idx);
    let test = real.select(&test_idx);

    let rf = sweep(&train, &test, &[RegressorKind::RandomForest], derive_seed(seed, &[tag("sweep")]))?;
    let noise_runs: Vec<f64> = (0..cfg.noise_repeats)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, &[tag("noise"), r as u64]);
            let perm = permutation(&mut rng_from_seed(s), train.n());
            let mut shuffled = train.clone();
            shuffled.secret = perm.iter().map(|&i| train.secret[i]).collect();
            Ok(best(&sweep(&shuffled, &test, &cfg.regressors, s)?).mse)
        })
        .collect::<Result<_>>()?;
    Ok(ReconBaseline {
        test_idx,
        train_idx,
        mse_real: rf[0].mse,
        mse_noise: noise_runs.iter().sum::<f64>() / noise_runs.len() as f64,
        noise_runs,
    })
}

/// `clamp(gap / (mse_noise - mse_real), 0, 1)`. A non-positive denominator
/// means the real data carries no usable signal; any positive gap then
/// counts as a full leak.
pub fn privacy_risk_score(gap: f64, mse_noise: f64, mse_real: f64) -> f64 {
    let denom = mse_noise - mse_real;
    if denom <= 0.0 {
        log::warn!("noise baseline {mse_noise} is not above the real-data MSE {mse_real}");
        return if gap > 0.0 { 1.0 } else { 0.0 };
    }
    (gap / denom).clamp(0.0, 1.0)
}

/// Reconstruction attack with precomputed baselines. Released rows identical
/// to a real test row are dropped before fitting.
pub fn reconstruction_with_baseline(
    synth: &FeatureTable,
    real: &FeatureTable,
    baseline: &ReconBaseline,
    cfg: &ReconConfig,
    seed: u64,
) -> Result<ReconResult> {
    cfg.validate()?;
    check_secret(synth, "released")?;
    if synth.names != real.names {
        return Err(Error::Schema("released and real tables have different columns".into()));
    }
    let test = real.select(&baseline.test_idx);
    let held_out: HashSet<[u8; 32]> = (0..test.n()).map(|i| test.row_fingerprint(i)).collect();
    let keep: Vec<usize> = (0..synth.n())
        .filter(|&i| !held_out.contains(&synth.row_fingerprint(i)))
        .collect();
    if keep.len() < 2 {
        return Err(Error::InsufficientData("released table has fewer than 2 usable rows".into()));
    }
    let train = synth.select(&keep);
    let scores = sweep(&train, &test, &cfg.regressors, derive_seed(seed, &[tag("sweep")]))?;
    let top = best(&scores).clone();
    let gap = baseline.mse_noise - top.mse;
    Ok(ReconResult {
        best_model: top.model,
        mse: top.mse,
        pearson: top.pearson,
        r2: top.r2,
        privacy_gap: gap,
        prs: privacy_risk_score(gap, baseline.mse_noise, baseline.mse_real),
        mse_noise: baseline.mse_noise,
        mse_real: baseline.mse_real,
        sweep: scores,
        train_rows: train.n(),
        test_rows: test.n(),
    })
}

/// Regressor-sweep reconstruction of the secret column of `real` from a
/// released table `synth`.
pub fn reconstruction_attack(
    synth: &FeatureTable,
    real: &FeatureTable,
    cfg: &ReconConfig,
    seed: u64,
) -> Result<ReconResult> {
    let baseline = recon_baseline(real, cfg, seed)?;
    reconstruction_with_baseline(synth, real, &baseline, cfg, seed)
}
