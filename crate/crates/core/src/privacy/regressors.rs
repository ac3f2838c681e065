//! Regressors swept by the reconstruction attack.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    BoostLoss, BoostParams, Criterion, ForestParams, GradBoost, MlpModel, MlpTask, MlpTrainConfig, RandomForest,
    StandardScaler, TreeParams,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, Matrix};

pub const RIDGE_LAMBDA: f64 = 1.0;
/// Lasso penalty as a fraction of `max |X^T y| / n` (the smallest penalty
/// that zeroes every coefficient).
pub const LASSO_ALPHA_FRACTION: f64 = 0.01;
pub const LASSO_TOL: f64 = 1e-6;
pub const LASSO_MAX_SWEEPS: usize = 10_000;
const FOREST_TREES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    RandomForest,
    GradBoost,
    Ridge,
    Lasso,
    Mlp,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 5] = [
        RegressorKind::RandomForest,
        RegressorKind::GradBoost,
        RegressorKind::Ridge,
        RegressorKind::Lasso,
        RegressorKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::RandomForest => "rf_reg",
            RegressorKind::GradBoost => "gb_reg",
            RegressorKind::Ridge => "ridge",
            RegressorKind::Lasso => "lasso",
            RegressorKind::Mlp => "mlp_reg",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            RegressorKind::RandomForest => "RF",
            RegressorKind::GradBoost => "GB",
            RegressorKind::Ridge => "Ridge",
            RegressorKind::Lasso => "Lasso",
            RegressorKind::Mlp => "MLP",
        }
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `y = x . coef + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn centered(x: &Matrix<f64>, y: &[f64]) -> (Matrix<f64>, Vec<f64>, Vec<f64>, f64) {
    let means = x.column_means();
    let ym = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let mut xc = x.clone();
    for i in 0..xc.rows() {
        for (v, m) in xc.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    (xc, y.iter().map(|v| v - ym).collect(), means, ym)
}

fn intercept(means: &[f64], ym: f64, coef: &[f64]) -> f64 {
    ym - means.iter().zip(coef).map(|(m, c)| m * c).sum::<f64>()
}

/// Minimizer of `|y - X b - b0|^2 + lambda |b|^2` (intercept unpenalized),
/// solved by Cholesky on `Xc^T Xc + lambda I`.
pub fn ridge(x: &Matrix<f64>, y: &[f64], lambda: f64) -> Result<LinearModel> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(Error::Dimension {
            expected: x.rows(),
            got: y.len(),
        });
    }
    let (xc, yc, means, ym) = centered(x, y);
    let xt = xc.transpose();
    let mut a = xt.matmul(&xc)?;
    for j in 0..a.rows() {
        a[(j, j)] += lambda;
    }
    let b: Vec<f64> = (0..xt.rows()).map(|j| crate::linalg::dot(xt.row(j), &yc)).collect();
    let coef = cholesky_solve(&a, &b)?;
    let intercept = intercept(&means, ym, &coef);
    Ok(LinearModel { coef, intercept })
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Coordinate descent for `(1 / 2n) |y - X b - b0|^2 + alpha |b|_1`,
/// stopping when the largest coefficient change in a sweep is below `tol`.
pub fn lasso(x: &Matrix<f64>, y: &[f64], alpha: f64, tol: f64) -> Result<LinearModel> {
    let n = x.rows();
    if n != y.len() || n == 0 {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    let d = x.cols();
    let (xc, yc, means, ym) = centered(x, y);
    let cols: Vec<Vec<f64>> = (0..d).map(|j| xc.column(j)).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64).collect();
    let mut coef = vec![0.0; d];
    let mut resid = yc;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for j in 0..d {
            if sq[j] == 0.0 {
                continue;
            }
            let rho = cols[j].iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n as f64 + sq[j] * coef[j];
            let new = soft_threshold(rho, alpha) / sq[j];
            let delta = new - coef[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(&cols[j]) {
                    *r -= delta * a;
                }
                coef[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            break;
        }
    }
    let intercept = intercept(&means, ym, &coef);
    Ok(LinearModel { coef, intercept })
}

/// Default lasso penalty for standardized `x`.
pub fn lasso_alpha(x: &Matrix<f64>, y: &[f64]) -> f64 {
    let n = x.rows().max(1) as f64;
    let ym = y.iter().sum::<f64>() / n;
    let max_corr = (0..x.cols())
        .map(|j| {
            x.iter_rows()
                .zip(y)
                .map(|(r, v)| r[j] * (v - ym))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    LASSO_ALPHA_FRACTION * max_corr / n
}

#[derive(Debug, Clone)]
enum RegModel {
    Forest(RandomForest),
    Boost(GradBoost),
    Linear(LinearModel),
    Mlp(MlpModel),
}

/// Regressor together with the feature scaler fitted on its training rows.
#[derive(Debug, Clone)]
pub struct FittedRegressor {
    pub kind: RegressorKind,
    scaler: StandardScaler,
    model: RegModel,
}

impl FittedRegressor {
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        let xs = self.scaler.transform(x);
        Ok(match &self.model {
            RegModel::Forest(f) => xs.iter_rows().map(|r| f.predict_row(r)).collect(),
            RegModel::Boost(b) => xs.iter_rows().map(|r| b.predict_row(r)).collect(),
            RegModel::Linear(l) => xs.iter_rows().map(|r| l.predict_row(r)).collect(),
            RegModel::Mlp(m) => m.predict(&xs)?,
        })
    }
}

pub fn fit_regressor(kind: RegressorKind, x: &Matrix<f64>, y: &[f64], seed: u64) -> Result<FittedRegressor> {
    if x.rows() != y.len() {
        return Err(Error::Dimension {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if x.rows() < 2 {
        return Err(Error::InsufficientData("regression needs at least 2 rows".into()));
    }
    let scaler = StandardScaler::fit(x);
    let xs = scaler.transform(x);
    let model = match kind {
        RegressorKind::RandomForest => RegModel::Forest(RandomForest::fit(
            &xs,
            y,
            ForestParams {
                n_estimators: FOREST_TREES,
                tree: TreeParams {
                    criterion: Criterion::SquaredError,
                    ..Default::default()
                },
            },
            seed,
        )),
        RegressorKind::GradBoost => RegModel::Boost(GradBoost::fit(
            &xs,
            y,
            BoostParams {
                n_estimators: 100,
                max_depth: 3,
                learning_rate: 0.1,
                subsample: 1.0,
                lambda: 1.0,
                loss: BoostLoss::SquaredError,
            },
            seed,
        )),
        RegressorKind::Ridge => RegModel::Linear(ridge(&xs, y, RIDGE_LAMBDA)?),
        RegressorKind::Lasso => RegModel::Linear(lasso(&xs, y, lasso_alpha(&xs, y), LASSO_TOL)?),
        RegressorKind::Mlp => RegModel::Mlp(MlpModel::fit(
            &xs,
            y,
            MlpTask::Regression,
            &MlpTrainConfig::new(&[64, 64]),
            seed,
        )?),
    };
    Ok(FittedRegressor { kind, scaler, model })
}
