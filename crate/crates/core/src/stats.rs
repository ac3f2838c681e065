//! Paired significance tests over outer-fold scores and Holm step-down
//! correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Significance level used for the `significant` flag.
pub const ALPHA: f64 = 0.05;

/// Largest sample size for which the Wilcoxon p-value is computed by full
/// enumeration of sign assignments.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Improvement,
    Drop,
    None,
}

impl Direction {
    fn of_mean_difference(d: f64) -> Self {
        if d > 0.0 {
            Direction::Improvement
        } else if d < 0.0 {
            Direction::Drop
        } else {
            Direction::None
        }
    }

    /// Arrow used in utility tables; empty when there is no direction.
    pub fn arrow(self) -> &'static str {
        match self {
            Direction::Improvement => "↑",
            Direction::Drop => "↓",
            Direction::None => "",
        }
    }
}

/// Outcome of a single two-sided paired test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    /// Infinite for a zero-variance t-test with non-zero mean; stored in
    /// JSON as the string `"inf"` / `"-inf"`.
    #[serde(with = "extended_f64")]
    pub statistic: f64,
    pub p_value: f64,
    /// Set when the data admit no test (all differences zero, or zero
    /// variance for the t-test).
    pub degenerate: bool,
}

/// JSON has no infinities, so non-finite values are written as strings.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *x {
            x if x.is_finite() => s.serialize_f64(x),
            x if x.is_nan() => s.serialize_str("nan"),
            x if x > 0.0 => s.serialize_str("inf"),
            _ => s.serialize_str("-inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

/// Which test decides the significance flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTest {
    #[default]
    PairedT,
    Wilcoxon,
    /// Significant only if both tests reject.
    Both,
    /// Significant if either test rejects.
    Either,
}

/// Paired comparison of a candidate against a reference, after correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    #[serde(with = "extended_f64")]
    pub statistic: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub direction: Direction,
    pub significant: bool,
    pub degenerate: bool,
    pub t_test: TestOutcome,
    pub wilcoxon: TestOutcome,
}

fn check_paired(a: &[f64], b: &[f64], min_n: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < min_n {
        return Err(Error::InsufficientData(format!(
            "paired test needs at least {min_n} pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("paired test input is not finite".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Midranks (1-based) of `values`, with the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = r;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test of `a - b`.
///
/// Zero differences are dropped; ties among the remaining magnitudes get
/// midranks. The statistic is `min(W+, W-)`. The p-value is exact (over all
/// `2^n` sign assignments of the observed ranks) for `n <= 25`, otherwise a
/// normal approximation with tie-corrected variance.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    let d: Vec<f64> = check_paired(a, b, 5)?.into_iter().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Ok(TestOutcome {
            statistic: 0.0,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, &x)| x > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let center = total / 2.0;
    let observed = (w_plus - center).abs();

    let p_value = if n <= WILCOXON_EXACT_MAX_N {
        exact_signed_rank_p(&ranks, center, observed)
    } else {
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = (n * (n + 1) * (2 * n + 1)) as f64 / 24.0 - tie_term;
        if var <= 0.0 {
            1.0
        } else {
            erfc(observed / var.sqrt() / std::f64::consts::SQRT_2)
        }
    };
    Ok(TestOutcome {
        statistic,
        p_value: p_value.min(1.0),
        degenerate: false,
    })
}

/// Fraction of sign assignments whose `|W+ - center|` is at least the
/// observed one. Ranks are doubled to integers so the count is exact.
fn exact_signed_rank_p(ranks: &[f64], center: f64, observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    // counts[s] = number of subsets whose doubled rank sum is s.
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = observed * 2.0 - 1e-9;
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - center * 2.0).abs() >= threshold)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / (1u64 << ranks.len()) as f64
}

/// Two-sided paired Student t-test of `a - b` with `n - 1` degrees of
/// freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    let d = check_paired(a, b, 2)?;
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= (mean.abs() * 1e-12).powi(2) {
        return Ok(TestOutcome {
            statistic: if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY },
            p_value: if mean == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = 2.0 * dist.sf(t.abs());
    Ok(TestOutcome {
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
        degenerate: false,
    })
}

/// Upper `1 - alpha/2` quantile of Student t with `df` degrees of freedom.
pub fn t_critical(df: f64, alpha: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha / 2.0))
}

/// Holm step-down adjusted p-values, returned in input order.
pub fn holm_bonferroni(p_values: &[f64]) -> Result<Vec<f64>> {
    if p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("p-values must lie in [0, 1]".into()));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(adj);
        out[i] = running;
    }
    Ok(out)
}

/// Compare each candidate's fold scores with the reference fold scores,
/// Holm-correcting the selected test's p-values across candidates.
///
/// For [`SignificanceTest::Both`] / [`SignificanceTest::Either`] the larger /
/// smaller raw p-value of the two tests is corrected.
pub fn compare_against_reference(
    candidates: &[Vec<f64>],
    reference: &[Vec<f64>],
    test: SignificanceTest,
) -> Result<Vec<PairedTestResult>> {
    if candidates.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: candidates.len(),
        });
    }
    let mut partial = Vec::with_capacity(candidates.len());
    for (a, b) in candidates.iter().zip(reference) {
        let t = paired_t_test(a, b)?;
        let w = if a.len() >= 5 {
            wilcoxon_signed_rank(a, b)?
        } else {
            TestOutcome {
                statistic: 0.0,
                p_value: 1.0,
                degenerate: true,
            }
        };
        let (statistic, p_raw, degenerate) = match test {
            SignificanceTest::PairedT => (t.statistic, t.p_value, t.degenerate),
            SignificanceTest::Wilcoxon => (w.statistic, w.p_value, w.degenerate),
            SignificanceTest::Both => (t.statistic, t.p_value.max(w.p_value), t.degenerate || w.degenerate),
            SignificanceTest::Either => (t.statistic, t.p_value.min(w.p_value), t.degenerate && w.degenerate),
        };
        let mean_diff = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len() as f64;
        partial.push((statistic, p_raw, degenerate, mean_diff, t, w));
    }
    let raw: Vec<f64> = partial.iter().map(|p| p.1).collect();
    let corrected = holm_bonferroni(&raw)?;
    Ok(partial
        .into_iter()
        .zip(corrected)
        .map(|((statistic, p_raw, degenerate, mean_diff, t_test, wilcoxon), p_corrected)| {
            let significant = p_corrected < ALPHA;
            PairedTestResult {
                statistic,
                p_raw,
                p_corrected,
                direction: if significant {
                    Direction::of_mean_difference(mean_diff)
                } else {
                    Direction::None
                },
                significant,
                degenerate,
                t_test,
                wilcoxon,
            }
        })
        .collect())
}
