mod common;

use synthgrid::classifiers::{Hyperparams, KnnWeights, PosteriorModel};
use synthgrid::features::FeatureTable;
use synthgrid::privacy::{
    auc, mia_attack, mia_for_table, recon_baseline, reconstruction_attack, reconstruction_with_baseline, MiaConfig,
    ReconConfig,
};
use synthgrid::rng::{normal, permutation, rng_from_seed};
use synthgrid::{Matrix, Result};

fn gaussian_table(n: usize, shift: f64, seed: u64) -> FeatureTable {
    let mut rng = rng_from_seed(seed);
    let d = 4;
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| normal(&mut rng) + shift).collect()).unwrap();
    let labels = x.iter_rows().map(|r| (r[0] + r[1] > 2.0 * shift) as u8).collect();
    FeatureTable::new(
        (0..n).map(|i| format!("g{seed}-{i}")).collect(),
        x,
        vec![0.0; n],
        labels,
        (0..d).map(|j| format!("f{j}")).collect(),
    )
    .unwrap()
}

/// 1-NN over its training rows; the winning label's posterior decays from 1
/// at distance 0 toward 1/2 far away.
struct Memorizer {
    x: Matrix,
    y: Vec<u8>,
}

impl PosteriorModel for Memorizer {
    fn posteriors(&self, q: &Matrix) -> Result<Vec<[f64; 2]>> {
        Ok(q.iter_rows()
            .map(|r| {
                let (d2, label) = self
                    .x
                    .iter_rows()
                    .zip(&self.y)
                    .map(|(t, &y)| (t.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), y))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .unwrap();
                let p = 0.5 + 0.5 * (-d2).exp();
                if label == 1 {
                    [1.0 - p, p]
                } else {
                    [p, 1.0 - p]
                }
            })
            .collect())
    }
}

struct Constant;

impl PosteriorModel for Constant {
    fn posteriors(&self, q: &Matrix) -> Result<Vec<[f64; 2]>> {
        Ok(vec![[0.5, 0.5]; q.rows()])
    }
}

#[test]
fn memorizing_target_is_exposed() {
    let members = gaussian_table(50, 0.0, 1);
    let population = gaussian_table(200, 3.0, 2);
    let target = Memorizer {
        x: members.features.clone(),
        y: members.labels.clone(),
    };
    let r = mia_attack(&members, &population, &target, &MiaConfig::default(), 7).unwrap();
    assert!(r.mean_auc >= 0.9, "{r:?}");
    assert!(r.ci_low <= r.mean_auc && r.mean_auc <= r.ci_high);
}

#[test]
fn constant_target_is_at_chance_and_deterministic() {
    let members = gaussian_table(50, 0.0, 3);
    let population = gaussian_table(200, 0.0, 4);
    let cfg = MiaConfig::default();
    let a = mia_attack(&members, &population, &Constant, &cfg, 11).unwrap();
    assert!((a.mean_auc - 0.5).abs() <= 0.05);
    assert_eq!(a.seed_aucs.len(), 5);
    let b = mia_attack(&members, &population, &Constant, &cfg, 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mia_on_a_trained_target_is_reproducible() {
    let table = common::sample_table(31, 120, 14);
    let hp = Hyperparams::Knn {
        n_neighbors: 1,
        weights: KnnWeights::Uniform,
    };
    let cfg = MiaConfig {
        shadow_trees: 30,
        attack_trees: 50,
        ..Default::default()
    };
    let a = mia_for_table(&table, &hp, &cfg, 5).unwrap();
    let b = mia_for_table(&table, &hp, &cfg, 5).unwrap();
    assert_eq!(a, b);
    assert!(0.0 <= a.ci_low && a.ci_low <= a.mean_auc && a.mean_auc <= a.ci_high && a.ci_high <= 1.0);
}

#[test]
fn auc_is_invariant_under_monotone_transforms() {
    let mut rng = rng_from_seed(9);
    let s: Vec<f64> = (0..300).map(|_| normal(&mut rng)).collect();
    let y: Vec<u8> = s.iter().map(|v| (v + normal(&mut rng) > 0.0) as u8).collect();
    let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
    assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
}

fn quick_recon() -> ReconConfig {
    ReconConfig {
        noise_repeats: 5,
        ..Default::default()
    }
}

#[test]
fn reconstruction_endpoints_on_the_sample_table() {
    let real = common::sample_table(41, 200, 28);
    let cfg = quick_recon();
    let base = recon_baseline(&real, &cfg, 3).unwrap();
    assert!(base.mse_noise >= base.mse_real, "{} < {}", base.mse_noise, base.mse_real);

    let copy = reconstruction_with_baseline(&real, &real, &base, &cfg, 3).unwrap();
    assert_eq!(copy.prs, 1.0);
    assert!(copy.mse <= copy.mse_real);
    assert_eq!(copy.train_rows, base.train_idx.len());

    let mut permuted = real.clone();
    let perm = permutation(&mut rng_from_seed(77), real.n());
    permuted.secret = perm.iter().map(|&i| real.secret[i]).collect();
    let shuffled = reconstruction_with_baseline(&permuted, &real, &base, &cfg, 3).unwrap();
    assert!(shuffled.prs <= 0.1, "{shuffled:?}");
}

#[test]
fn reconstruction_is_deterministic() {
    let real = common::sample_table(42, 80, 14);
    let cfg = ReconConfig {
        noise_repeats: 2,
        ..Default::default()
    };
    let a = reconstruction_attack(&real, &real, &cfg, 8).unwrap();
    let b = reconstruction_attack(&real, &real, &cfg, 8).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.prs));
}
