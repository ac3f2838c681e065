//! Black-box shadow-model membership inference on max-prob posteriors.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auc;
use crate::classifiers::{fit, fit_mlp_classifier, Hyperparams, MlpTrainConfig, PosteriorModel, TrainedClassifier};
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, shuffle, tag};
use crate::stats::t_critical;

/// Smallest shadow member set and target query set accepted.
pub const MIN_SHADOW_ROWS: usize = 10;
pub const MIN_QUERY_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowKind {
    RandomForest,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    RandomForest,
    Mlp,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::RandomForest => "random_forest",
            AttackKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub n_shadow: usize,
    /// Shadow model kinds, cycled over the shadows.
    pub shadow_kinds: Vec<ShadowKind>,
    pub attack_kinds: Vec<AttackKind>,
    pub shadow_trees: usize,
    pub shadow_hidden: Vec<usize>,
    pub attack_trees: usize,
    pub attack_hidden: Vec<usize>,
    /// Early-stopping hold-out for the MLP models.
    pub holdout_fraction: f64,
    pub patience: usize,
    pub n_seeds: usize,
    /// Fraction of the evaluated table used to train the target model.
    pub target_fraction: f64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            n_shadow: 5,
            shadow_kinds: vec![ShadowKind::RandomForest, ShadowKind::Mlp],
            attack_kinds: vec![AttackKind::RandomForest, AttackKind::Mlp],
            shadow_trees: 100,
            shadow_hidden: vec![64, 64],
            attack_trees: 200,
            attack_hidden: vec![32, 32],
            holdout_fraction: 0.1,
            patience: 10,
            n_seeds: 5,
            target_fraction: 0.5,
        }
    }
}

impl MiaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mia: {m}")));
        if self.n_shadow == 0 || self.shadow_kinds.is_empty() {
            return bad("need at least one shadow model");
        }
        if self.attack_kinds.is_empty() {
            return bad("need at least one attack model");
        }
        if self.n_seeds < 2 {
            return bad("need at least 2 seeds for an interval");
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 0.5)");
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return bad("target_fraction must lie in (0, 1)");
        }
        if self.shadow_trees == 0 || self.attack_trees == 0 {
            return bad("tree counts must be positive");
        }
        Ok(())
    }

    fn mlp(&self, hidden: &[usize]) -> MlpTrainConfig {
        MlpTrainConfig {
            val_fraction: self.holdout_fraction,
            patience: self.patience,
            ..MlpTrainConfig::new(hidden)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Attacker with the higher mean AUC; its numbers are reported.
    pub attack: AttackKind,
    pub mean_auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed_aucs: Vec<f64>,
    pub attackers: Vec<AttackSummary>,
    pub shadow_rows: usize,
    pub query_rows: usize,
}

fn max_prob(model: &(impl PosteriorModel + ?Sized), x: &Matrix<f64>) -> Result<Vec<f64>> {
    Ok(model.posteriors(x)?.into_iter().map(|p| p[0].max(p[1])).collect())
}

fn column(v: Vec<f64>) -> Matrix<f64> {
    let n = v.len();
    Matrix::from_vec(n, 1, v).expect("single column")
}

/// Two disjoint sets of `size` rows drawn from `idx` with the pool's class
/// ratio. Needs `idx.len() >= 2 * size + 2`.
fn stratified_halves(table: &FeatureTable, idx: &[usize], size: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for &i in idx {
        by_class[table.labels[i] as usize].push(i);
    }
    for class in &mut by_class {
        shuffle(rng, class);
    }
    let ones = ((size * by_class[1].len()) as f64 / idx.len() as f64).round() as usize;
    let ones = ones.clamp((by_class[1].len() >= 2) as usize, by_class[1].len() / 2);
    let ones = ones.max(size.saturating_sub(by_class[0].len() / 2));
    let counts = [size - ones, ones];
    let (mut a, mut b) = (Vec::with_capacity(size), Vec::with_capacity(size));
    for (class, &k) in by_class.iter().zip(&counts) {
        a.extend_from_slice(&class[..k]);
        b.extend_from_slice(&class[k..2 * k]);
    }
    (a, b)
}

fn fit_shadow(kind: ShadowKind, x: &Matrix<f64>, y: &[u8], cfg: &MiaConfig, seed: u64) -> Result<TrainedClassifier> {
    match kind {
        ShadowKind::RandomForest => fit(
            &Hyperparams::RandomForest {
                n_estimators: cfg.shadow_trees,
                max_depth: None,
                min_samples_split: 2,
            },
            x,
            y,
            seed,
        ),
        ShadowKind::Mlp => fit_mlp_classifier(x, y, &cfg.mlp(&cfg.shadow_hidden), seed),
    }
}

fn fit_attacker(kind: AttackKind, x: &Matrix<f64>, y: &[u8], cfg: &MiaConfig, seed: u64) -> Result<TrainedClassifier> {
    match kind {
        AttackKind::RandomForest => fit(
            &Hyperparams::RandomForest {
                n_estimators: cfg.attack_trees,
                max_depth: None,
                min_samples_split: 2,
            },
            x,
            y,
            seed,
        ),
        AttackKind::Mlp => fit_mlp_classifier(x, y, &cfg.mlp(&cfg.attack_hidden), seed),
    }
}

/// Sizes derived from the pools: (target queries per side, shadow member set).
fn sizes(members: usize, population: usize) -> Result<(usize, usize)> {
    let k_eval = members.min(population / 2);
    // Two spare rows so odd class counts can still fill both halves.
    let shadow = members.min((population - k_eval).saturating_sub(2) / 2);
    if k_eval < MIN_QUERY_ROWS || shadow < MIN_SHADOW_ROWS {
        return Err(Error::Config(format!(
            "membership inference needs at least {MIN_QUERY_ROWS} query rows and {MIN_SHADOW_ROWS} shadow rows; \
             got {k_eval} and {shadow} from {members} members and {population} non-members"
        )));
    }
    Ok((k_eval, shadow))
}

/// One seed: AUC of each configured attacker against the target.
fn run_seed(
    members: &FeatureTable,
    population: &FeatureTable,
    target: &(impl PosteriorModel + ?Sized),
    cfg: &MiaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let (k_eval, shadow_n) = sizes(members.n(), population.n())?;
    let mut rng = rng_from_seed(derive_seed(seed, &[tag("split")]));
    let mut member_idx: Vec<usize> = (0..members.n()).collect();
    shuffle(&mut rng, &mut member_idx);
    let mut pop_idx: Vec<usize> = (0..population.n()).collect();
    shuffle(&mut rng, &mut pop_idx);
    let (query_out, pool) = pop_idx.split_at(k_eval);

    let mut attack_x = Vec::new();
    let mut attack_y = Vec::new();
    for s in 0..cfg.n_shadow {
        let kind = cfg.shadow_kinds[s % cfg.shadow_kinds.len()];
        let mut srng = rng_from_seed(derive_seed(seed, &[tag("shadow-split"), s as u64]));
        let (inside, outside) = stratified_halves(population, pool, shadow_n, &mut srng);
        let xin = population.features.select_rows(&inside);
        let yin: Vec<u8> = inside.iter().map(|&i| population.labels[i]).collect();
        let model = fit_shadow(kind, &xin, &yin, cfg, derive_seed(seed, &[tag("shadow"), s as u64]))?;
        for (rows, is_member) in [(&inside, 1u8), (&outside, 0u8)] {
            let p = max_prob(&model, &population.features.select_rows(rows))?;
            attack_y.extend(std::iter::repeat_n(is_member, p.len()));
            attack_x.extend(p);
        }
    }
    let attack_x = column(attack_x);

    let mut query = max_prob(target, &members.features.select_rows(&member_idx[..k_eval]))?;
    query.extend(max_prob(target, &population.features.select_rows(query_out))?);
    let query = column(query);
    let truth: Vec<u8> = (0..2 * k_eval).map(|i| (i < k_eval) as u8).collect();

    cfg.attack_kinds
        .iter()
        .enumerate()
        .map(|(a, &kind)| {
            let attacker = fit_attacker(kind, &attack_x, &attack_y, cfg, derive_seed(seed, &[tag("attack"), a as u64]))?;
            auc(&attacker.predict_proba(&query)?, &truth)
        })
        .collect()
}

/// Mean and two-sided 95% t-interval, clamped to [0, 1].
fn t_interval(values: &[f64]) -> Result<(f64, f64, f64)> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = t_critical(n - 1.0, 0.05)? * (var / n).sqrt();
    let mean = mean.clamp(0.0, 1.0);
    Ok((mean, (mean - half).clamp(0.0, 1.0), (mean + half).clamp(0.0, 1.0)))
}

/// Shadow-model membership inference against `target`, whose training rows
/// are `members`. Shadows and non-member queries come from `population`;
/// rows of `population` identical to a member row are ignored.
pub fn mia_attack(
    members: &FeatureTable,
    population: &FeatureTable,
    target: &(impl PosteriorModel + ?Sized),
    cfg: &MiaConfig,
    seed: u64,
) -> Result<MiaResult> {
    cfg.validate()?;
    if members.names != population.names {
        return Err(Error::Schema("member and population tables have different columns".into()));
    }
    let taken: HashSet<[u8; 32]> = (0..members.n()).map(|i| members.row_fingerprint(i)).collect();
    let keep: Vec<usize> = (0..population.n())
        .filter(|&i| !taken.contains(&population.row_fingerprint(i)))
        .collect();
    let population = population.select(&keep);
    let (k_eval, shadow_n) = sizes(members.n(), population.n())?;
    if population.class_counts().iter().any(|&c| c < 2) {
        return Err(Error::InsufficientData("shadow population needs both classes".into()));
    }

    let per_seed: Vec<Vec<f64>> = (0..cfg.n_seeds)
        .into_par_iter()
        .map(|s| run_seed(members, &population, target, cfg, derive_seed(seed, &[tag("mia-seed"), s as u64])))
        .collect::<Result<_>>()?;

    let attackers: Vec<AttackSummary> = cfg
        .attack_kinds
        .iter()
        .enumerate()
        .map(|(a, &kind)| {
            let aucs: Vec<f64> = per_seed.iter().map(|s| s[a]).collect();
            let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
            AttackSummary { kind, aucs, mean_auc }
        })
        .collect();
    let best = attackers
        .iter()
        .reduce(|a, b| if b.mean_auc > a.mean_auc { b } else { a })
        .expect("validated non-empty");
    let (mean_auc, ci_low, ci_high) = t_interval(&best.aucs)?;
    Ok(MiaResult {
        attack: best.kind,
        mean_auc,
        ci_low,
        ci_high,
        seed_aucs: best.aucs.clone(),
        attackers: attackers.clone(),
        shadow_rows: shadow_n,
        query_rows: k_eval,
    })
}

/// Train a target with `hp` on a stratified `target_fraction` split of
/// `table` and attack it, using the remaining rows as the population.
pub fn mia_for_table(table: &FeatureTable, hp: &Hyperparams, cfg: &MiaConfig, seed: u64) -> Result<MiaResult> {
    cfg.validate()?;
    let mut rng = rng_from_seed(derive_seed(seed, &[tag("target-split")]));
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..table.n()).filter(|&i| table.labels[i] == class).collect();
        shuffle(&mut rng, &mut idx);
        let k = (idx.len() as f64 * cfg.target_fraction).round() as usize;
        inside.extend_from_slice(&idx[..k]);
        outside.extend_from_slice(&idx[k..]);
    }
    inside.sort_unstable();
    outside.sort_unstable();
    let members = table.select(&inside);
    let target = fit(hp, &members.features, &members.labels, derive_seed(seed, &[tag("target")]))?;
    mia_attack(&members, &table.select(&outside), &target, cfg, derive_seed(seed, &[tag("attack")]))
}
