//! The five baseline classifiers behind a common scaled fit/predict
//! interface, their search grids, and nested cross-validation.

mod boost;
mod cv;
mod forest;
mod knn;
mod metrics;
mod mlp;
mod scaler;
mod svm;
mod tree;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed};

pub use boost::{BoostLoss, BoostParams, GradBoost};
pub use cv::{
    nested_cv, random_search, stratified_folds, tstr_evaluate, ClassifierCv, CvConfig, CvMode, CvReport, FoldResult,
    CI_Z,
};
pub use forest::{sqrt_features, ForestParams, RandomForest};
pub use knn::{Knn, KnnWeights};
pub use metrics::{accuracy, confusion, macro_f1};
pub use mlp::{MlpModel, MlpTask, MlpTrainConfig};
pub use scaler::StandardScaler;
pub use svm::{gamma_scale, Platt, SvmModel, SMO_MAX_ITER, SMO_TOL};
pub use tree::{Criterion, Presorted, Tree, TreeParams};

/// Minimum training rows accepted by [`fit`].
pub const MIN_TRAIN_ROWS: usize = 10;
/// Fraction of the training rows used to calibrate SVM posteriors.
pub const PLATT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    DecisionTree,
    RandomForest,
    Knn,
    SvmRbf,
    GradBoost,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::DecisionTree,
        ClassifierKind::RandomForest,
        ClassifierKind::Knn,
        ClassifierKind::SvmRbf,
        ClassifierKind::GradBoost,
    ];

    /// Column label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ClassifierKind::DecisionTree => "DT",
            ClassifierKind::RandomForest => "RF",
            ClassifierKind::Knn => "KNN",
            ClassifierKind::SvmRbf => "SVM",
            ClassifierKind::GradBoost => "XGB",
        }
    }

    /// Randomized-search space for this kind.
    pub fn grid(self) -> Vec<Hyperparams> {
        let mut g = Vec::new();
        match self {
            ClassifierKind::DecisionTree => {
                for max_depth in [None, Some(10), Some(20), Some(30)] {
                    for criterion in [Criterion::Gini, Criterion::Entropy] {
                        g.push(Hyperparams::DecisionTree { max_depth, criterion });
                    }
                }
            }
            ClassifierKind::RandomForest => {
                for n_estimators in [100, 300, 500] {
                    for max_depth in [None, Some(10), Some(20)] {
                        for min_samples_split in [2, 5] {
                            g.push(Hyperparams::RandomForest {
                                n_estimators,
                                max_depth,
                                min_samples_split,
                            });
                        }
                    }
                }
            }
            ClassifierKind::Knn => {
                for n_neighbors in (3..=15).step_by(2) {
                    for weights in [KnnWeights::Uniform, KnnWeights::Distance] {
                        g.push(Hyperparams::Knn { n_neighbors, weights });
                    }
                }
            }
            ClassifierKind::SvmRbf => {
                for c in [1.0, 10.0] {
                    g.push(Hyperparams::SvmRbf { c });
                }
            }
            ClassifierKind::GradBoost => {
                for n_estimators in [100, 300, 500] {
                    for max_depth in [3, 6, 10] {
                        for learning_rate in [0.01, 0.1, 0.3] {
                            for subsample in [0.8, 1.0] {
                                g.push(Hyperparams::GradBoost {
                                    n_estimators,
                                    max_depth,
                                    learning_rate,
                                    subsample,
                                });
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One point of a classifier's search space. SVMs always use the RBF kernel
/// with `gamma = 1 / (d Var(X))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hyperparams {
    DecisionTree {
        max_depth: Option<usize>,
        criterion: Criterion,
    },
    RandomForest {
        n_estimators: usize,
        max_depth: Option<usize>,
        min_samples_split: usize,
    },
    Knn {
        n_neighbors: usize,
        weights: KnnWeights,
    },
    SvmRbf {
        c: f64,
    },
    GradBoost {
        n_estimators: usize,
        max_depth: usize,
        learning_rate: f64,
        subsample: f64,
    },
}

impl Hyperparams {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyperparams::DecisionTree { .. } => ClassifierKind::DecisionTree,
            Hyperparams::RandomForest { .. } => ClassifierKind::RandomForest,
            Hyperparams::Knn { .. } => ClassifierKind::Knn,
            Hyperparams::SvmRbf { .. } => ClassifierKind::SvmRbf,
            Hyperparams::GradBoost { .. } => ClassifierKind::GradBoost,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Tree(Tree),
    Forest(RandomForest),
    Knn(Knn),
    Svm { svm: SvmModel, platt: Platt },
    Boost(GradBoost),
    Mlp(MlpModel),
}

/// Anything that exposes class posteriors for raw (unscaled) feature rows.
pub trait PosteriorModel: Sync {
    /// `[P(y = 0), P(y = 1)]` per row.
    fn posteriors(&self, x: &Matrix<f64>) -> Result<Vec<[f64; 2]>>;
}

/// A fitted classifier together with the scaler fitted on its training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub description: String,
    pub scaler: StandardScaler,
    model: Model,
}

fn check_training(x: &Matrix<f64>, y: &[u8]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if x.rows() < MIN_TRAIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "classifier needs at least {MIN_TRAIN_ROWS} rows, got {}",
            x.rows()
        )));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training features are not finite".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::Fit("training labels contain a single class".into()));
    }
    Ok(())
}

/// Fit a zoo classifier.
pub fn fit(hp: &Hyperparams, x: &Matrix<f64>, y: &[u8], seed: u64) -> Result<TrainedClassifier> {
    check_training(x, y)?;
    let scaler = StandardScaler::fit(x);
    let xs = scaler.transform(x);
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let all: Vec<usize> = (0..x.rows()).collect();
    let model = match *hp {
        Hyperparams::DecisionTree { max_depth, criterion } => {
            let p = TreeParams {
                criterion,
                max_depth,
                min_samples_split: 2,
                max_features: None,
            };
            Model::Tree(Tree::fit(&xs, &yf, &all, p, &mut rng_from_seed(seed)))
        }
        Hyperparams::RandomForest {
            n_estimators,
            max_depth,
            min_samples_split,
        } => {
            let p = ForestParams {
                n_estimators,
                tree: TreeParams {
                    criterion: Criterion::Gini,
                    max_depth,
                    min_samples_split,
                    max_features: Some(sqrt_features(x.cols())),
                },
            };
            Model::Forest(RandomForest::fit(&xs, &yf, p, seed))
        }
        Hyperparams::Knn { n_neighbors, weights } => Model::Knn(Knn::fit(xs, y.to_vec(), n_neighbors, weights)),
        Hyperparams::SvmRbf { c } => fit_svm(&xs, y, c, seed)?,
        Hyperparams::GradBoost {
            n_estimators,
            max_depth,
            learning_rate,
            subsample,
        } => {
            let p = BoostParams {
                n_estimators,
                max_depth,
                learning_rate,
                subsample,
                lambda: 1.0,
                loss: BoostLoss::Logistic,
            };
            Model::Boost(GradBoost::fit(&xs, &yf, p, seed))
        }
    };
    Ok(TrainedClassifier {
        description: serde_json::to_string(hp).unwrap_or_default(),
        scaler,
        model,
    })
}

/// SVM whose posterior sigmoid is fitted on a stratified 20% split held out
/// from an auxiliary SVM; the returned decision function is refitted on all
/// rows.
fn fit_svm(xs: &Matrix<f64>, y: &[u8], c: f64, seed: u64) -> Result<Model> {
    let gamma = gamma_scale(xs);
    let mut rng = rng_from_seed(derive_seed(seed, &[0x9147]));
    let mut cal = Vec::new();
    let mut fit_rows = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        crate::rng::shuffle(&mut rng, &mut idx);
        let k = ((idx.len() as f64 * PLATT_FRACTION).round() as usize).min(idx.len().saturating_sub(1));
        cal.extend_from_slice(&idx[..k]);
        fit_rows.extend_from_slice(&idx[k..]);
    }
    cal.sort_unstable();
    fit_rows.sort_unstable();
    let cal_has_both = cal.iter().any(|&i| y[i] == 0) && cal.iter().any(|&i| y[i] == 1);
    let platt = if cal_has_both {
        let aux_y: Vec<u8> = fit_rows.iter().map(|&i| y[i]).collect();
        let aux = SvmModel::fit(&xs.select_rows(&fit_rows), &aux_y, c, gamma)?;
        let f: Vec<f64> = cal.iter().map(|&i| aux.decision(xs.row(i))).collect();
        let cy: Vec<u8> = cal.iter().map(|&i| y[i]).collect();
        Some(Platt::fit(&f, &cy))
    } else {
        None
    };
    let svm = SvmModel::fit(xs, y, c, gamma)?;
    let platt = match platt {
        Some(p) => p,
        None => {
            let f: Vec<f64> = (0..y.len()).map(|i| svm.decision(xs.row(i))).collect();
            Platt::fit(&f, y)
        }
    };
    Ok(Model::Svm { svm, platt })
}

/// Fit a binary MLP classifier (used by the membership-inference attack).
pub fn fit_mlp_classifier(x: &Matrix<f64>, y: &[u8], cfg: &MlpTrainConfig, seed: u64) -> Result<TrainedClassifier> {
    check_training(x, y)?;
    let scaler = StandardScaler::fit(x);
    let xs = scaler.transform(x);
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    Ok(TrainedClassifier {
        description: format!("mlp{:?}", cfg.hidden),
        scaler,
        model: Model::Mlp(MlpModel::fit(&xs, &yf, MlpTask::Binary, cfg, seed)?),
    })
}

impl TrainedClassifier {
    /// Class-1 probability per row.
    pub fn predict_proba(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        if x.cols() != self.scaler.means.len() {
            return Err(Error::Dimension {
                expected: self.scaler.means.len(),
                got: x.cols(),
            });
        }
        let xs = self.scaler.transform(x);
        let p = match &self.model {
            Model::Tree(t) => xs.iter_rows().map(|r| t.predict_row(r)).collect(),
            Model::Forest(f) => xs.iter_rows().map(|r| f.predict_row(r)).collect(),
            Model::Knn(k) => xs.iter_rows().map(|r| k.predict_row(r)).collect(),
            Model::Svm { svm, platt } => xs.iter_rows().map(|r| platt.probability(svm.decision(r))).collect(),
            Model::Boost(b) => xs.iter_rows().map(|r| b.predict_row(r)).collect(),
            Model::Mlp(m) => m.predict(&xs)?,
        };
        Ok(p)
    }

    /// Argmax of the posteriors; ties go to class 0.
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| (p > 0.5) as u8).collect())
    }
}

impl PosteriorModel for TrainedClassifier {
    fn posteriors(&self, x: &Matrix<f64>) -> Result<Vec<[f64; 2]>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| [1.0 - p, p]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let sizes: Vec<usize> = ClassifierKind::ALL.iter().map(|k| k.grid().len()).collect();
        assert_eq!(sizes, vec![8, 18, 14, 2, 54]);
    }

    #[test]
    fn hyperparams_round_trip_json() {
        for k in ClassifierKind::ALL {
            for hp in k.grid() {
                let s = serde_json::to_string(&hp).unwrap();
                assert_eq!(serde_json::from_str::<Hyperparams>(&s).unwrap(), hp);
                assert_eq!(hp.kind(), k);
            }
        }
    }

    #[test]
    fn single_class_and_small_inputs_are_rejected() {
        let x = Matrix::from_vec(12, 1, (0..12).map(f64::from).collect()).unwrap();
        let hp = Hyperparams::SvmRbf { c: 1.0 };
        assert!(matches!(fit(&hp, &x, &[1; 12], 0), Err(Error::Fit(_))));
        let small = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(fit(&hp, &small, &[0, 1, 0, 1], 0).is_err());
    }
}
