//! Distributional similarity between a real and a synthetic table: Gaussian
//! KDE divergences, per-feature moment parity, and a 2-D PCA projection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{derive_seed, normal, rng_from_seed};
use crate::scalar::Scalar;

/// Default Monte Carlo sample count for divergence estimates.
pub const DEFAULT_MC_N: usize = 20_000;
/// Densities are floored at this value before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Relative bandwidth given to constant columns (times the global scale).
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

const MC_CHUNK: usize = 1_000;

/// Scott's rule factor `n^(-1/(d+4))`.
pub fn scott_factor(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Product-Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde<T> {
    data: Matrix<T>,
    bandwidths: Vec<T>,
    inv_bandwidths: Vec<T>,
    /// `-ln n - sum_j ln(h_j sqrt(2 pi))`.
    log_norm: T,
}

/// Fit a KDE with per-dimension Scott bandwidths `h_j = s_j n^(-1/(d+4))`,
/// `s_j` the sample (n - 1) standard deviation of column `j`.
///
/// Constant columns get `h_j = 1e-6` times the global data scale (the mean
/// non-zero column deviation, else the largest absolute value, else 1).
pub fn fit_kde<T: Scalar>(data: &Matrix<T>) -> Result<Kde<T>> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::InsufficientData(format!("KDE needs at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("KDE needs at least one column".into()));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("KDE input is not finite".into()));
    }
    let correction = (n as f64 / (n as f64 - 1.0)).sqrt();
    let stds: Vec<f64> = data.column_stds().iter().map(|s| s.f64() * correction).collect();
    let nonzero: Vec<f64> = stds.iter().copied().filter(|&s| s > 0.0).collect();
    let global = if !nonzero.is_empty() {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    } else {
        let m = data.as_slice().iter().fold(0.0f64, |m, v| m.max(v.f64().abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let factor = scott_factor(n, d);
    let bandwidths: Vec<T> = stds
        .iter()
        .map(|&s| T::of(if s > 0.0 { s * factor } else { BANDWIDTH_FLOOR * global }))
        .collect();
    Ok(Kde::from_parts(data.clone(), bandwidths))
}

impl<T: Scalar> Kde<T> {
    fn from_parts(data: Matrix<T>, bandwidths: Vec<T>) -> Self {
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        let log_norm = -T::of_usize(data.rows()).ln() - bandwidths.iter().map(|&h| (h * two_pi.sqrt()).ln()).sum::<T>();
        let inv_bandwidths = bandwidths.iter().map(|&h| T::one() / h).collect();
        Self {
            data,
            bandwidths,
            inv_bandwidths,
            log_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn bandwidths(&self) -> &[T] {
        &self.bandwidths
    }

    pub fn data(&self) -> &Matrix<T> {
        &self.data
    }

    /// Log density at `x`, via log-sum-exp over kernels.
    pub fn log_density(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: &[T]) -> T {
        let half = T::of(0.5);
        let mut best = T::neg_infinity();
        let mut exps: Vec<T> = Vec::with_capacity(self.n());
        for row in self.data.iter_rows() {
            let mut q = T::zero();
            for ((&xi, &ci), &ih) in x.iter().zip(row).zip(&self.inv_bandwidths) {
                let z = (xi - ci) * ih;
                q = q + z * z;
            }
            let e = -half * q;
            if e > best {
                best = e;
            }
            exps.push(e);
        }
        let s: T = exps.iter().map(|&e| (e - best).exp()).sum();
        best + s.ln() + self.log_norm
    }

    /// One draw from the KDE mixture.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<T> {
        let i = rng.random_range(0..self.n());
        self.data
            .row(i)
            .iter()
            .zip(&self.bandwidths)
            .map(|(&c, &h)| c + h * T::of(normal(rng)))
            .collect()
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Mean and standard error of `f(x)` over `mc_n` draws from `src`, computed
/// in seeded chunks and reduced in chunk order.
fn mc_mean<T: Scalar>(src: &Kde<T>, mc_n: usize, seed: u64, f: impl Fn(&[T]) -> f64 + Sync) -> McEstimate {
    let chunks = mc_n.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, &[c as u64]));
            let count = MC_CHUNK.min(mc_n - c * MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = f(&src.sample(&mut rng));
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = mc_n as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
    McEstimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

fn check_dims<T: Scalar>(p: &Kde<T>, q: &Kde<T>) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn floored_log(v: f64) -> f64 {
    v.max(DENSITY_FLOOR.ln())
}

/// `KL(P || Q)` by Monte Carlo over draws from `P`, with `log q` floored at
/// `ln(1e-300)`.
pub fn kl_divergence<T: Scalar>(p: &Kde<T>, q: &Kde<T>, mc_n: usize, seed: u64) -> Result<McEstimate> {
    check_dims(p, q)?;
    if mc_n < 2 {
        return Err(Error::InvalidArgument("mc_n must be at least 2".into()));
    }
    Ok(mc_mean(p, mc_n, seed, |x| {
        floored_log(p.log_density_unchecked(x).f64()) - floored_log(q.log_density_unchecked(x).f64())
    }))
}

/// Jensen-Shannon divergence `0.5 KL(P || M) + 0.5 KL(Q || M)` with `M` the
/// equal mixture, each term estimated from draws of its own component.
/// The result is clamped to `[0, ln 2]`.
pub fn js_divergence<T: Scalar>(p: &Kde<T>, q: &Kde<T>, mc_n: usize, seed: u64) -> Result<McEstimate> {
    check_dims(p, q)?;
    if mc_n < 2 {
        return Err(Error::InvalidArgument("mc_n must be at least 2".into()));
    }
    let ln2 = std::f64::consts::LN_2;
    let term = |x: &[T], own: &Kde<T>, other: &Kde<T>| {
        let a = floored_log(own.log_density_unchecked(x).f64());
        let b = floored_log(other.log_density_unchecked(x).f64());
        let hi = a.max(b);
        let log_m = hi + ((a - hi).exp() + (b - hi).exp()).ln() - ln2;
        a - log_m
    };
    // The two halves use distinct child streams so swapping arguments
    // exchanges the halves exactly.
    let kp = mc_mean(p, mc_n, derive_seed(seed, &[1]), |x| term(x, p, q));
    let kq = mc_mean(q, mc_n, derive_seed(seed, &[1]), |x| term(x, q, p));
    Ok(McEstimate {
        value: (0.5 * (kp.value + kq.value)).clamp(0.0, ln2),
        se: 0.5 * (kp.se * kp.se + kq.se * kq.se).sqrt(),
    })
}

/// Mean, population standard deviation, skewness `g1` and excess kurtosis
/// `g2` (both without small-sample correction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Moments {
        mean,
        std: m2.sqrt(),
        skewness,
        kurtosis,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub feature: String,
    pub real: Moments,
    pub synthetic: Moments,
    /// Absolute differences, in the same order as [`Moments`].
    pub delta: Moments,
}

/// Per-column moment comparison. Both tables must share their column count.
pub fn moment_parity(real: &Matrix<f64>, synth: &Matrix<f64>, names: &[String]) -> Result<Vec<MomentRow>> {
    if real.cols() != synth.cols() || names.len() != real.cols() {
        return Err(Error::Schema(format!(
            "moment parity: {} real columns, {} synthetic, {} names",
            real.cols(),
            synth.cols(),
            names.len()
        )));
    }
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let r = moments(&real.column(j));
            let s = moments(&synth.column(j));
            MomentRow {
                feature: name.clone(),
                real: r,
                synthetic: s,
                delta: Moments {
                    mean: (r.mean - s.mean).abs(),
                    std: (r.std - s.std).abs(),
                    skewness: (r.skewness - s.skewness).abs(),
                    kurtosis: (r.kurtosis - s.kurtosis).abs(),
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub source: Source,
}

/// Project both tables onto the top two principal components of the pooled,
/// column-standardized data. Each axis is signed so its largest-magnitude
/// loading is positive.
pub fn project_2d(real: &Matrix<f64>, synth: &Matrix<f64>) -> Result<Vec<ProjectedPoint>> {
    if real.cols() != synth.cols() {
        return Err(Error::Dimension {
            expected: real.cols(),
            got: synth.cols(),
        });
    }
    if real.cols() < 2 {
        return Err(Error::InvalidArgument("projection needs at least 2 features".into()));
    }
    let pooled = real.stack(synth)?;
    let means = pooled.column_means();
    let stds: Vec<f64> = pooled.column_stds().iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect();
    let z = |m: &Matrix<f64>| {
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - means[j]) / stds[j];
            }
        }
        out
    };
    let pooled_z = z(&pooled);
    let eig = symmetric_eigen(&pooled_z.covariance(), 1e-13)?;
    let axes: Vec<Vec<f64>> = (0..2)
        .map(|k| {
            let mut v = eig.vector(k);
            let lead = v.iter().fold(0.0f64, |a, &b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let mut out = Vec::with_capacity(pooled.rows());
    for (m, source) in [(real, Source::Real), (synth, Source::Synthetic)] {
        for row in z(m).iter_rows() {
            out.push(ProjectedPoint {
                x: crate::linalg::dot(row, &axes[0]),
                y: crate::linalg::dot(row, &axes[1]),
                source,
            });
        }
    }
    Ok(out)
}

/// Divergences and moment parity of a synthetic table against the real one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub kl: f64,
    pub kl_se: f64,
    pub js: f64,
    pub js_se: f64,
    pub mc_sample_count: usize,
    pub moments: Vec<MomentRow>,
}

/// `KL(real || synth)`, `JS(real, synth)` and moment parity.
pub fn fidelity_report(
    real: &Matrix<f64>,
    synth: &Matrix<f64>,
    names: &[String],
    mc_n: usize,
    seed: u64,
) -> Result<FidelityReport> {
    let p = fit_kde(real)?;
    let q = fit_kde(synth)?;
    let kl = kl_divergence(&p, &q, mc_n, derive_seed(seed, &[0]))?;
    let js = js_divergence(&p, &q, mc_n, derive_seed(seed, &[1]))?;
    Ok(FidelityReport {
        kl: kl.value,
        kl_se: kl.se,
        js: js.value,
        js_se: js.se,
        mc_sample_count: mc_n,
        moments: moment_parity(real, synth, names)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Matrix<f64> {
        let mut rng = rng_from_seed(seed);
        let data = (0..n * d).map(|_| normal(&mut rng) + shift).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn scott_ratio_at_reference_scale() {
        assert!((scott_factor(1117, 24) - 0.778).abs() < 5e-4);
    }

    #[test]
    fn bandwidths_follow_scott() {
        let m = gaussian(300, 3, 0.0, 1);
        let k = fit_kde(&m).unwrap();
        let s = m.column_stds()[1] * (300.0f64 / 299.0).sqrt();
        assert!((k.bandwidths()[1] - s * scott_factor(300, 3)).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_naive_oracle() {
        let m = gaussian(40, 3, 0.0, 2);
        let k = fit_kde(&m).unwrap();
        let q = gaussian(100, 3, 0.3, 3);
        let h = k.bandwidths().to_vec();
        for x in q.iter_rows() {
            let mut dens = 0.0;
            for c in m.iter_rows() {
                let mut prod = 1.0;
                for j in 0..3 {
                    let z = (x[j] - c[j]) / h[j];
                    prod *= (-0.5 * z * z).exp() / (h[j] * (2.0 * std::f64::consts::PI).sqrt());
                }
                dens += prod;
            }
            dens /= 40.0;
            let got = k.log_density(x).unwrap();
            assert!((got - dens.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_points_use_floor() {
        let m = Matrix::from_rows(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let k = fit_kde(&m).unwrap();
        let h = BANDWIDTH_FLOOR * 2.0;
        assert_eq!(k.bandwidths(), &[h, h]);
        let want = -(h * (2.0 * std::f64::consts::PI).sqrt()).ln() * 2.0;
        assert!((k.log_density(&[2.0, 2.0]).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn f32_kde_agrees_with_f64() {
        let m = gaussian(30, 2, 0.0, 4);
        let m32 = Matrix::from_vec(30, 2, m.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
        let a = fit_kde(&m).unwrap().log_density(&[0.1, -0.2]).unwrap();
        let b = fit_kde(&m32).unwrap().log_density(&[0.1f32, -0.2]).unwrap();
        assert!((a - b as f64).abs() < 1e-4);
    }

    #[test]
    fn self_divergence_is_small() {
        let k = fit_kde(&gaussian(200, 4, 0.0, 5)).unwrap();
        let kl = kl_divergence(&k, &k, 4000, 9).unwrap();
        assert_eq!(kl.value, 0.0);
        let js = js_divergence(&k, &k, 4000, 9).unwrap();
        assert!(js.value < 0.005);
    }

    #[test]
    fn js_of_far_apart_clouds_approaches_ln2() {
        let p = fit_kde(&gaussian(100, 2, 0.0, 6)).unwrap();
        let q = fit_kde(&gaussian(100, 2, 50.0, 7)).unwrap();
        let js = js_divergence(&p, &q, 2000, 1).unwrap();
        assert!(js.value >= 0.95 * std::f64::consts::LN_2);
        assert!(js.value <= std::f64::consts::LN_2);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = fit_kde(&gaussian(10, 2, 0.0, 1)).unwrap();
        let q = fit_kde(&gaussian(10, 3, 0.0, 1)).unwrap();
        assert!(kl_divergence(&p, &q, 100, 0).is_err());
        assert!(js_divergence(&p, &q, 100, 0).is_err());
        assert!(fit_kde(&gaussian(1, 2, 0.0, 1)).is_err());
    }

    #[test]
    fn moments_of_known_samples() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - 1.25f64.sqrt()).abs() < 1e-15);
        assert!(m.skewness.abs() < 1e-15);
        // m4 / m2^2 - 3 = 2.5625 / 1.5625 - 3.
        assert!((m.kurtosis - (2.5625 / 1.5625 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn moment_parity_of_copy_is_zero() {
        let m = gaussian(50, 2, 0.0, 8);
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = moment_parity(&m, &m, &names).unwrap();
        for r in rows {
            assert_eq!(r.delta, Moments { mean: 0.0, std: 0.0, skewness: 0.0, kurtosis: 0.0 });
        }
    }

    #[test]
    fn projection_of_copy_is_identical_and_ordered() {
        let m = gaussian(60, 4, 0.0, 10);
        let pts = project_2d(&m, &m).unwrap();
        let (r, s) = pts.split_at(60);
        for (a, b) in r.iter().zip(s) {
            assert_eq!((a.x, a.y), (b.x, b.y));
        }
        let var = |f: &dyn Fn(&ProjectedPoint) -> f64| {
            let mu = pts.iter().map(f).sum::<f64>() / pts.len() as f64;
            pts.iter().map(|p| (f(p) - mu).powi(2)).sum::<f64>()
        };
        assert!(var(&|p| p.x) >= var(&|p| p.y));
        assert!(project_2d(&gaussian(5, 1, 0.0, 1), &gaussian(5, 1, 0.0, 2)).is_err());
    }
}
