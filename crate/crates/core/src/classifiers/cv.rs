//! Stratified folds, randomized hyperparameter search, nested
//! cross-validation with a row-fingerprint leakage audit, and
//! train-on-synthetic / test-on-real evaluation.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::rng::{derive_seed, rng_from_seed, sample_without_replacement, shuffle};

use super::{fit, macro_f1, ClassifierKind, Hyperparams};

/// Normal quantile used for the fold-score confidence interval.
pub const CI_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub n_iter: usize,
    pub outer_k: usize,
    pub inner_k: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_iter: 10,
            outer_k: 5,
            inner_k: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMode {
    /// Nested CV on the evaluated table itself.
    Nested,
    /// Search and fit on the evaluated table, score on real outer folds.
    TrainSyntheticTestReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub macro_f1: f64,
    pub inner_score: f64,
    pub chosen: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCv {
    pub kind: ClassifierKind,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Population standard deviation of the fold scores.
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ClassifierCv {
    fn from_folds(kind: ClassifierKind, folds: Vec<FoldResult>) -> Self {
        let k = folds.len() as f64;
        let mean = folds.iter().map(|f| f.macro_f1).sum::<f64>() / k;
        let std = (folds.iter().map(|f| (f.macro_f1 - mean).powi(2)).sum::<f64>() / k).sqrt();
        let half = CI_Z * std / k.sqrt();
        Self {
            kind,
            folds,
            mean,
            std,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.macro_f1).collect()
    }

    /// Hyperparameters chosen in the best-scoring outer fold.
    pub fn best_hyperparams(&self) -> Hyperparams {
        self.folds
            .iter()
            .max_by(|a, b| a.macro_f1.total_cmp(&b.macro_f1).then(b.fold.cmp(&a.fold)))
            .map(|f| f.chosen)
            .expect("at least one fold")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mode: CvMode,
    pub config: CvConfig,
    pub classifiers: Vec<ClassifierCv>,
    /// Training rows compared against outer-test fingerprints.
    pub leakage_checked_rows: usize,
    /// Training rows whose fingerprint matched an outer-test row.
    pub leakage_violations: usize,
}

impl CvReport {
    pub fn get(&self, kind: ClassifierKind) -> Option<&ClassifierCv> {
        self.classifiers.iter().find(|c| c.kind == kind)
    }

    /// Classifier with the highest mean macro-F1 (first on ties).
    pub fn best(&self) -> Option<&ClassifierCv> {
        self.classifiers
            .iter()
            .reduce(|a, b| if b.mean > a.mean { b } else { a })
    }

    pub fn best_mean(&self) -> f64 {
        self.best().map_or(f64::NAN, |c| c.mean)
    }
}

/// Stratified `k`-fold split; returns the test indices of each fold. Each
/// class is shuffled and dealt round-robin, continuing where the previous
/// class stopped, so fold sizes and class counts differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} members, fewer than {k} folds",
                idx.len()
            )));
        }
        shuffle(rng, &mut idx);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let t: HashSet<usize> = test.iter().copied().collect();
    (0..n).filter(|i| !t.contains(i)).collect()
}

struct Audit<'a> {
    table: &'a FeatureTable,
    forbidden: HashSet<[u8; 32]>,
    checked: &'a AtomicUsize,
    violations: &'a AtomicUsize,
}

impl Audit<'_> {
    fn check(&self, rows: &[usize]) {
        let hits = rows
            .iter()
            .filter(|&&i| self.forbidden.contains(&self.table.row_fingerprint(i)))
            .count();
        self.checked.fetch_add(rows.len(), Ordering::Relaxed);
        self.violations.fetch_add(hits, Ordering::Relaxed);
    }
}

fn score_rows(hp: &Hyperparams, table: &FeatureTable, train: &[usize], test: &FeatureTable, seed: u64) -> Result<f64> {
    let tr = table.select(train);
    let model = fit(hp, &tr.features, &tr.labels, seed)?;
    macro_f1(&test.labels, &model.predict(&test.features)?)
}

/// Sample up to `n_iter` grid points without replacement and pick the one
/// with the best mean inner `inner_k`-fold macro-F1 over rows `rows` of
/// `table`. Returns the choice and its inner score.
pub fn random_search(
    kind: ClassifierKind,
    table: &FeatureTable,
    rows: &[usize],
    n_iter: usize,
    inner_k: usize,
    seed: u64,
) -> Result<(Hyperparams, f64)> {
    search(kind, table, rows, n_iter, inner_k, seed, None)
}

fn search(
    kind: ClassifierKind,
    table: &FeatureTable,
    rows: &[usize],
    n_iter: usize,
    inner_k: usize,
    seed: u64,
    audit: Option<&Audit<'_>>,
) -> Result<(Hyperparams, f64)> {
    let grid = kind.grid();
    let mut rng = rng_from_seed(derive_seed(seed, &[1]));
    let picks = sample_without_replacement(&mut rng, grid.len(), n_iter.max(1));
    let sub = table.select(rows);
    let inner = stratified_folds(&sub.labels, inner_k, &mut rng_from_seed(derive_seed(seed, &[2])))?;
    let mut best: Option<(Hyperparams, f64)> = None;
    for (c, &g) in picks.iter().enumerate() {
        let hp = grid[g];
        let mut total = 0.0;
        for (f, test) in inner.iter().enumerate() {
            let train = complement(sub.n(), test);
            if let Some(a) = audit {
                let original: Vec<usize> = train.iter().map(|&i| rows[i]).collect();
                a.check(&original);
            }
            total += score_rows(&hp, &sub, &train, &sub.select(test), derive_seed(seed, &[3, c as u64, f as u64]))?;
        }
        let mean = total / inner.len() as f64;
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((hp, mean));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty search grid".into()))
}

/// Nested stratified cross-validation: outer `outer_k` folds for scoring,
/// randomized search over inner `inner_k` folds for selection, refit on the
/// whole outer-training split. Outer and search tasks draw from seeds
/// derived from `seed`, so results do not depend on scheduling.
pub fn nested_cv(table: &FeatureTable, kinds: &[ClassifierKind], cfg: &CvConfig, seed: u64) -> Result<CvReport> {
    let outer = stratified_folds(&table.labels, cfg.outer_k, &mut rng_from_seed(derive_seed(seed, &[0])))?;
    let checked = AtomicUsize::new(0);
    let violations = AtomicUsize::new(0);
    let tasks: Vec<(usize, usize)> = (0..kinds.len()).flat_map(|c| (0..outer.len()).map(move |f| (c, f))).collect();
    let results: Vec<Result<FoldResult>> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let kind = kinds[c];
            let test = &outer[f];
            let train = complement(table.n(), test);
            let audit = Audit {
                table,
                forbidden: test.iter().map(|&i| table.row_fingerprint(i)).collect(),
                checked: &checked,
                violations: &violations,
            };
            let task_seed = derive_seed(seed, &[10, kind as u64, f as u64]);
            let (hp, inner_score) = search(kind, table, &train, cfg.n_iter, cfg.inner_k, task_seed, Some(&audit))?;
            audit.check(&train);
            let score = score_rows(&hp, table, &train, &table.select(test), derive_seed(task_seed, &[99]))?;
            Ok(FoldResult {
                fold: f,
                macro_f1: score,
                inner_score,
                chosen: hp,
            })
        })
        .collect();
    let mut it = results.into_iter();
    let mut classifiers = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let folds = (0..outer.len()).map(|_| it.next().expect("one result per task")).collect::<Result<Vec<_>>>()?;
        classifiers.push(ClassifierCv::from_folds(kind, folds));
    }
    Ok(CvReport {
        mode: CvMode::Nested,
        config: *cfg,
        classifiers,
        leakage_checked_rows: checked.into_inner(),
        leakage_violations: violations.into_inner(),
    })
}

/// Search and fit each classifier on `train` (with inner CV over `train`),
/// then score on each outer fold of `real`. Folds are drawn exactly as in
/// [`nested_cv`] on `real` with the same seed, so fold scores pair up with
/// the real-data nested CV. Training rows identical to a fold's test rows
/// (a semi-synthetic table contains the real rows) are removed for that
/// fold.
pub fn tstr_evaluate(
    train: &FeatureTable,
    real: &FeatureTable,
    kinds: &[ClassifierKind],
    cfg: &CvConfig,
    seed: u64,
) -> Result<CvReport> {
    if train.names != real.names {
        return Err(Error::Schema("train and test tables have different columns".into()));
    }
    let outer = stratified_folds(&real.labels, cfg.outer_k, &mut rng_from_seed(derive_seed(seed, &[0])))?;
    let fold_rows: Vec<Vec<usize>> = outer
        .iter()
        .map(|test| {
            let forbidden: HashSet<[u8; 32]> = test.iter().map(|&i| real.row_fingerprint(i)).collect();
            (0..train.n())
                .filter(|&i| !forbidden.contains(&train.row_fingerprint(i)))
                .collect()
        })
        .collect();
    let shared = fold_rows.iter().all(|r| r.len() == train.n());
    let checked: usize = fold_rows.iter().map(Vec::len).sum::<usize>() * kinds.len();

    let tasks: Vec<(usize, usize)> = (0..kinds.len()).flat_map(|c| (0..outer.len()).map(move |f| (c, f))).collect();
    let results: Vec<Result<FoldResult>> = tasks
        .par_iter()
        .map(|&(c, f)| {
            let kind = kinds[c];
            let rows = &fold_rows[f];
            // With no overlap every fold trains on the same rows; a shared
            // seed then yields the same model in each fold.
            let task_seed = if shared {
                derive_seed(seed, &[20, kind as u64])
            } else {
                derive_seed(seed, &[20, kind as u64, f as u64])
            };
            let (hp, inner_score) = random_search(kind, train, rows, cfg.n_iter, cfg.inner_k, task_seed)?;
            let score = score_rows(&hp, train, rows, &real.select(&outer[f]), derive_seed(task_seed, &[99]))?;
            Ok(FoldResult {
                fold: f,
                macro_f1: score,
                inner_score,
                chosen: hp,
            })
        })
        .collect();
    let mut it = results.into_iter();
    let mut classifiers = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let folds = (0..outer.len()).map(|_| it.next().expect("one result per task")).collect::<Result<Vec<_>>>()?;
        classifiers.push(ClassifierCv::from_folds(kind, folds));
    }
    Ok(CvReport {
        mode: CvMode::TrainSyntheticTestReal,
        config: *cfg,
        classifiers,
        leakage_checked_rows: checked,
        leakage_violations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_and_partition() {
        let labels: Vec<u8> = (0..103).map(|i| (i % 4 == 0) as u8).collect();
        let folds = stratified_folds(&labels, 5, &mut rng_from_seed(1)).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let ones: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == 1).count()).collect();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(ones.iter().max().unwrap() - ones.iter().min().unwrap() <= 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_members_is_error() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1];
        assert!(stratified_folds(&labels, 5, &mut rng_from_seed(1)).is_err());
    }
}
