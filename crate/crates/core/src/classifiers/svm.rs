//! Soft-margin RBF SVM trained by SMO with maximal-violating-pair working
//! set selection, and Platt posterior calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SMO_TOL: f64 = 1e-3;
pub const SMO_MAX_ITER: usize = 10_000;
const TAU: f64 = 1e-12;

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// `1 / (d * Var(X))` over all entries of `x`.
pub fn gamma_scale(x: &Matrix<f64>) -> f64 {
    let v = x.as_slice();
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.cols() as f64 * var)
    } else {
        1.0
    }
}

/// Fitted decision function `f(x) = sum_i coef_i K(sv_i, x) - rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    support: Matrix<f64>,
    coef: Vec<f64>,
    rho: f64,
    gamma: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    /// Train on rows of `x` with labels `y` in {0, 1}.
    pub fn fit(x: &Matrix<f64>, y: &[u8], c: f64, gamma: f64) -> Result<Self> {
        let n = x.rows();
        if n < 2 || !y.contains(&0) || !y.contains(&1) {
            return Err(Error::Fit("SVM needs both classes".into()));
        }
        let ys: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(x.row(i), x.row(j), gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];
        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let up = |a: f64, yv: f64| (yv > 0.0 && a < c) || (yv < 0.0 && a > 0.0);
        let low = |a: f64, yv: f64| (yv > 0.0 && a > 0.0) || (yv < 0.0 && a < c);

        let mut iterations = 0;
        let mut converged = false;
        while iterations < SMO_MAX_ITER {
            let (mut gmax, mut i) = (f64::NEG_INFINITY, usize::MAX);
            let (mut gmax2, mut j) = (f64::NEG_INFINITY, usize::MAX);
            for t in 0..n {
                let v = -ys[t] * grad[t];
                if up(alpha[t], ys[t]) && v > gmax {
                    gmax = v;
                    i = t;
                }
                let w = ys[t] * grad[t];
                if low(alpha[t], ys[t]) && w > gmax2 {
                    gmax2 = w;
                    j = t;
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax + gmax2 < SMO_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            let (ai, aj) = (alpha[i], alpha[j]);
            if ys[i] != ys[j] {
                let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = ai - aj;
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = ai + aj;
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
            for t in 0..n {
                grad[t] += q(t, i) * di + q(t, j) * dj;
            }
        }
        if !converged {
            log::warn!("SMO stopped at the iteration cap ({SMO_MAX_ITER}) before reaching tolerance");
        }

        let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for t in 0..n {
            let yg = ys[t] * grad[t];
            if alpha[t] >= c {
                if ys[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if ys[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };

        let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        Ok(Self {
            support: x.select_rows(&sv),
            coef: sv.iter().map(|&t| alpha[t] * ys[t]).collect(),
            rho,
            gamma,
            iterations,
            converged,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter_rows()
            .zip(&self.coef)
            .map(|(s, &a)| a * rbf(s, x, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }
}

/// Platt sigmoid `P(y = 1 | f) = 1 / (1 + exp(a f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    /// Newton fit with backtracking on smoothed targets.
    pub fn fit(decisions: &[f64], y: &[u8]) -> Self {
        let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
        let n_neg = y.len() as f64 - n_pos;
        let hi = (n_pos + 1.0) / (n_pos + 2.0);
        let lo = 1.0 / (n_neg + 2.0);
        let t: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
        let (mut a, mut b) = (0.0, ((n_neg + 1.0) / (n_pos + 1.0)).ln());
        let objective = |a: f64, b: f64| -> f64 {
            decisions
                .iter()
                .zip(&t)
                .map(|(&f, &ti)| {
                    let z = f * a + b;
                    if z >= 0.0 {
                        ti * z + (1.0 + (-z).exp()).ln()
                    } else {
                        (ti - 1.0) * z + (1.0 + z.exp()).ln()
                    }
                })
                .sum()
        };
        let mut fval = objective(a, b);
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
            for (&f, &ti) in decisions.iter().zip(&t) {
                let z = f * a + b;
                let (p, q) = if z >= 0.0 {
                    let e = (-z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = z.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += f * f * d2;
                h22 += d2;
                h21 += f * d2;
                let d1 = ti - p;
                g1 += f * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            let mut moved = false;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    moved = true;
                    break;
                }
                step /= 2.0;
            }
            if !moved {
                break;
            }
        }
        Self { a, b }
    }

    pub fn probability(&self, f: f64) -> f64 {
        let z = f * self.a + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}
