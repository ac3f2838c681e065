use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

use super::{FeatureTable, FeatureVector, UnlabeledTable};

const ORIENTATION_FEATURE: &str = "low_usage_ratio";

/// PC1 responsiveness score over z-scored features, with its label threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    /// Unit-norm first principal component.
    pub loadings: Vec<f64>,
    pub threshold_quantile: f64,
    pub threshold_value: f64,
}

/// Inverted-ECDF quantile: the smallest sample value `x` with
/// `#{s <= x} / n >= q`. Duplicating every sample leaves it unchanged.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

pub fn fit_score_model(features: &Matrix<f64>, names: &[String], q: f64) -> Result<ScoreModel> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 rows, got {n}")));
    }
    if names.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: names.len(),
        });
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
    }
    let means = features.column_means();
    let mut stds = features.column_stds();
    for (j, s) in stds.iter_mut().enumerate() {
        if *s <= 1e-12 * means[j].abs().max(1.0) {
            log::warn!("feature `{}` is constant; using unit scale", names[j]);
            *s = 1.0;
        }
    }
    let z = zscore(features, &means, &stds);
    let eig = symmetric_eigen(&z.covariance(), 1e-13)?;
    let mut w = eig.vector(0);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);

    let pivot = names
        .iter()
        .position(|n| n == ORIENTATION_FEATURE)
        .unwrap_or_else(|| {
            (0..d)
                .max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()))
                .unwrap_or(0)
        });
    if w[pivot] < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }

    let scores: Vec<f64> = z.iter_rows().map(|r| dot(&w, r)).collect();
    Ok(ScoreModel {
        names: names.to_vec(),
        feature_means: means,
        feature_stds: stds,
        loadings: w,
        threshold_quantile: q,
        threshold_value: empirical_quantile(&scores, q),
    })
}

fn zscore(x: &Matrix<f64>, means: &[f64], stds: &[f64]) -> Matrix<f64> {
    let mut z = x.clone();
    for i in 0..z.rows() {
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            *v = (*v - means[j]) / stds[j];
        }
    }
    z
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn score_row(model: &ScoreModel, x: &[f64]) -> f64 {
    x.iter()
        .zip(&model.feature_means)
        .zip(&model.feature_stds)
        .zip(&model.loadings)
        .map(|(((v, m), s), w)| w * ((v - m) / s))
        .sum()
}

pub fn score(model: &ScoreModel, x: &FeatureVector) -> Result<f64> {
    if x.len() != model.loadings.len() {
        return Err(Error::Dimension {
            expected: model.loadings.len(),
            got: x.len(),
        });
    }
    Ok(score_row(model, &x.values))
}

/// Label 1 iff the score strictly exceeds the model threshold.
pub fn assign_labels(model: &ScoreModel, table: &UnlabeledTable) -> Result<FeatureTable> {
    if table.names != model.names {
        return Err(Error::Schema("table and score model disagree on features".into()));
    }
    let labels = table
        .features
        .iter_rows()
        .map(|r| u8::from(score_row(model, r) > model.threshold_value))
        .collect();
    FeatureTable::new(
        table.household_ids.clone(),
        table.features.clone(),
        table.secret.clone(),
        labels,
        table.names.clone(),
    )
}

impl ScoreModel {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::rng::{normal, rng_from_seed};

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("f{j}")).collect()
    }

    fn unlabeled(x: Matrix<f64>) -> UnlabeledTable {
        let n = x.rows();
        UnlabeledTable {
            household_ids: (0..n).map(|i| i.to_string()).collect(),
            secret: vec![0.0; n],
            names: names(x.cols()),
            features: x,
        }
    }

    #[test]
    fn single_axis_variance() {
        let x = Matrix::from_rows(&[vec![-1.0, 5.0], vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let m = fit_score_model(&x, &names(2), 0.75).unwrap();
        assert!((m.loadings[0].abs() - 1.0).abs() < 1e-12);
        assert_eq!(m.loadings[1], 0.0);
        assert_eq!(m.feature_stds[1], 1.0);
    }

    #[test]
    fn duplication_leaves_model_unchanged() {
        let mut rng = rng_from_seed(1);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| normal(&mut rng)).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let dup: Vec<Vec<f64>> = rows.iter().cycle().take(90).cloned().collect();
        let xd = Matrix::from_rows(&dup).unwrap();
        let a = fit_score_model(&x, &names(4), 0.75).unwrap();
        let b = fit_score_model(&xd, &names(4), 0.75).unwrap();
        for (u, v) in a.loadings.iter().zip(&b.loadings) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!((a.threshold_value - b.threshold_value).abs() < 1e-9);
    }

    #[test]
    fn score_examples() {
        let mut rng = rng_from_seed(2);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let mut m = fit_score_model(&x, &names(3), 0.75).unwrap();
        let at_mean = FeatureVector::new(m.feature_means.clone()).unwrap();
        assert!(score(&m, &at_mean).unwrap().abs() < 1e-12);

        m.loadings = vec![1.0, 0.0, 0.0];
        let mut v = m.feature_means.clone();
        v[0] += 2.0 * m.feature_stds[0];
        assert!((score(&m, &FeatureVector::new(v).unwrap()).unwrap() - 2.0).abs() < 1e-12);
        assert!(score(&m, &FeatureVector::new(vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn quantile_labels_top_quarter() {
        // Scores along one axis: 100 distinct values.
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 * 0.37, 1.0]).collect();
        let t = unlabeled(Matrix::from_rows(&rows).unwrap());
        let m = fit_score_model(&t.features, &t.names, 0.75).unwrap();
        let labelled = assign_labels(&m, &t).unwrap();
        assert_eq!(labelled.labels.iter().filter(|&&y| y == 1).count(), 25);
    }

    #[test]
    fn ties_fall_to_zero() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, 2.0]).collect();
        let t = unlabeled(Matrix::from_rows(&rows).unwrap());
        let m = fit_score_model(&t.features, &t.names, 0.75).unwrap();
        let labelled = assign_labels(&m, &t).unwrap();
        assert!(labelled.labels.iter().all(|&y| y == 0));
    }

    #[test]
    fn quantile_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.75), 75.0);
        assert_eq!(empirical_quantile(&[3.0], 0.5), 3.0);
    }

    #[test]
    fn orientation_uses_low_usage_ratio() {
        let mut rng = rng_from_seed(9);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let t = normal(&mut rng);
                vec![t + 0.1 * normal(&mut rng), -t + 0.1 * normal(&mut rng)]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let n = vec!["high_usage_ratio".to_string(), "low_usage_ratio".to_string()];
        let m = fit_score_model(&x, &n, 0.75).unwrap();
        assert!(m.loadings[1] > 0.0);
        assert!(m.loadings[0] < 0.0);
    }
}
