mod common;

use proptest::prelude::*;

use synthgrid::classifiers::{macro_f1, stratified_folds};
use synthgrid::features::fit_score_model;
use synthgrid::fidelity::{fit_kde, js_divergence, kl_divergence};
use synthgrid::generators::{synthesize, train, FamilyConfig, GeneratorConfig, NoiseConfig, SynthesisRegime};
use synthgrid::ingest::{parse_readings, standardize, ColumnMapping};
use synthgrid::privacy::auc;
use synthgrid::rng::rng_from_seed;
use synthgrid::stats::{holm_bonferroni, paired_t_test, wilcoxon_signed_rank};
use synthgrid::Matrix;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

fn mean_std(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    (m, (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn standardization_is_unit_and_idempotent(values in prop::collection::vec(0.0f64..10.0, 2..200)) {
        let z = standardize(&values);
        let (m, s) = mean_std(&values);
        if s <= 1e-12 * m.abs().max(1.0) {
            prop_assert!(z.iter().all(|&v| v == 0.0));
        } else {
            let (zm, zs) = mean_std(&z);
            prop_assert!(zm.abs() < 1e-9 && (zs - 1.0).abs() < 1e-9);
            let again = standardize(&z);
            prop_assert!(z.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn parsed_plus_dropped_equals_input_rows(kwh in prop::collection::vec(prop::option::of(0.0f64..5.0), 1..60)) {
        let start = chrono::NaiveDate::from_ymd_opt(2013, 1, 5).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let mut csv = String::from("household_id,timestamp,kwh,tariff_tier\n");
        for (i, k) in kwh.iter().enumerate() {
            let t = start + chrono::Duration::minutes(30 * i as i64);
            let v = k.map(|x| x.to_string()).unwrap_or_default();
            csv.push_str(&format!("H1,{},{v},Normal\n", t.format("%Y-%m-%dT%H:%MZ")));
        }
        let parsed = parse_readings(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        prop_assert_eq!(parsed.readings.len() + parsed.dropped_count, kwh.len());
        prop_assert_eq!(parsed.dropped_count, kwh.iter().filter(|k| k.is_none()).count());
    }

    #[test]
    fn labels_survive_affine_rescaling(j in 0usize..24, a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let table = common::sample_table(7, 60, 7);
        let labels_of = |x: &Matrix| {
            let m = fit_score_model(x, &table.names, 0.75).unwrap();
            x.iter_rows()
                .map(|r| {
                    let s: f64 = r
                        .iter()
                        .zip(&m.feature_means)
                        .zip(&m.feature_stds)
                        .zip(&m.loadings)
                        .map(|(((v, mu), sd), w)| w * ((v - mu) / sd))
                        .sum();
                    u8::from(s > m.threshold_value)
                })
                .collect::<Vec<u8>>()
        };
        let mut scaled = table.features.clone();
        for i in 0..scaled.rows() {
            scaled[(i, j)] = a * scaled[(i, j)] + b;
        }
        prop_assert_eq!(labels_of(&table.features), labels_of(&scaled));
    }

    #[test]
    fn random_compositions_match_finite_differences(seed in any::<u64>(), k in 0usize..28) {
        let mut rng = rng_from_seed(seed);
        let c = common::expr::composition(k, 4, &mut rng);
        let err = common::expr::max_relative_error(&c, 1e-5);
        prop_assert!(err < 1e-4, "{:?}: {}", c.root, err);
    }

    #[test]
    fn folds_are_stratified(labels in prop::collection::vec(0u8..2, 10..120), k in 2usize..6, seed in any::<u64>()) {
        let counts = [labels.iter().filter(|&&y| y == 0).count(), labels.iter().filter(|&&y| y == 1).count()];
        prop_assume!(counts[0] >= k && counts[1] >= k);
        let folds = stratified_folds(&labels, k, &mut rng_from_seed(seed)).unwrap();
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        let ratio = counts[1] as f64 / labels.len() as f64;
        for f in &folds {
            let ones = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
            prop_assert!((ones - ratio * f.len() as f64).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn macro_f1_is_symmetric_under_relabeling(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..100)) {
        let (t, p): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let flip = |v: &[u8]| v.iter().map(|y| 1 - y).collect::<Vec<u8>>();
        let a = macro_f1(&t, &p).unwrap();
        let b = macro_f1(&flip(&t), &flip(&p)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn divergences_are_bounded_and_permutation_invariant(seed in any::<u64>(), shift in 0.0f64..3.0) {
        let mut rng = rng_from_seed(seed);
        let n = 40;
        let p_data = Matrix::from_vec(n, 2, (0..2 * n).map(|_| synthgrid::rng::normal(&mut rng)).collect()).unwrap();
        let q_data = Matrix::from_vec(n, 2, (0..2 * n).map(|_| shift + synthgrid::rng::normal(&mut rng)).collect()).unwrap();
        let (p, q) = (fit_kde(&p_data).unwrap(), fit_kde(&q_data).unwrap());
        let kl = kl_divergence(&p, &q, 2000, 1).unwrap();
        prop_assert!(kl.value >= -3.0 * kl.se);
        let js = js_divergence(&p, &q, 2000, 2).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&js.value));

        let order: Vec<usize> = (0..n).rev().collect();
        let pp = fit_kde(&p_data.select_rows(&order)).unwrap();
        for x in q_data.iter_rows() {
            let (a, b) = (p.log_density(x).unwrap(), pp.log_density(x).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
        let kl_perm = kl_divergence(&pp, &q, 2000, 1).unwrap();
        let se = kl.se.hypot(kl_perm.se).max(1e-9);
        prop_assert!((kl_perm.value - kl.value).abs() <= 5.0 * se);
    }

    #[test]
    fn auc_is_invariant_under_monotone_maps(scores in prop::collection::vec(-5.0f64..5.0, 4..80), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let labels: Vec<u8> = scores.iter().map(|_| rand::Rng::random_range(&mut rng, 0..2u8)).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let base = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + s * s * s).collect();
        prop_assert!((auc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn holm_is_monotone_and_dominates_raw(p in prop::collection::vec(0.0f64..=1.0, 1..8)) {
        let c = holm_bonferroni(&p).unwrap();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            prop_assert!(c[w[0]] <= c[w[1]]);
        }
        for (raw, adj) in p.iter().zip(&c) {
            prop_assert!(adj >= raw && *adj <= 1.0);
        }
    }

    #[test]
    fn paired_tests_are_symmetric(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 5..12)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (t1, t2) = (paired_t_test(&a, &b).unwrap(), paired_t_test(&b, &a).unwrap());
        prop_assert!((t1.p_value - t2.p_value).abs() < 1e-12);
        prop_assert!((t1.statistic + t2.statistic).abs() < 1e-9 || t1.degenerate);
        let (w1, w2) = (wilcoxon_signed_rank(&a, &b).unwrap(), wilcoxon_signed_rank(&b, &a).unwrap());
        prop_assert!((w1.p_value - w2.p_value).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn synthetic_tables_are_valid_and_reproducible(fraction in 0.0f64..0.5, seed in any::<u64>()) {
        let table = common::sample_table(12, 40, 7);
        let cfg = GeneratorConfig::new(FamilyConfig::NoiseAug(NoiseConfig { fraction }), seed);
        let g = train(&table, &cfg).unwrap();
        let a = synthesize(&g, SynthesisRegime::full(), &table, seed ^ 1).unwrap();
        let b = synthesize(&train(&table, &cfg).unwrap(), SynthesisRegime::full(), &table, seed ^ 1).unwrap();
        prop_assert_eq!(&a, &b);
        for i in 0..a.n() {
            prop_assert!(a.labels[i] <= 1);
            let row = a.features.row(i).iter().chain(std::iter::once(&a.secret[i]));
            for (v, (lo, hi)) in row.zip(&g.bounds) {
                prop_assert!(v.is_finite() && v >= lo && v <= hi);
            }
        }
    }
}
