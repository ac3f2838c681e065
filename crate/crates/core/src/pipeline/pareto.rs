use serde::{Deserialize, Serialize};

/// One dataset's privacy-utility point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub dataset: String,
    pub family: String,
    pub regime: String,
    pub prs: f64,
    pub macro_f1: f64,
    pub mia_auc: f64,
    pub on_frontier: bool,
}

/// Indices of the rows not dominated by any other row, where lower PRS and
/// higher macro-F1 are better. Exact duplicates do not dominate each other.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let dominates = |a: (f64, f64), b: (f64, f64)| a.0 <= b.0 && a.1 >= b.1 && (a.0 < b.0 || a.1 > b.1);
    // Sorting by PRS then descending F1 lets one sweep keep the best F1 seen.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .0
            .total_cmp(&points[j].0)
            .then(points[j].1.total_cmp(&points[i].1))
    });
    let mut keep = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for i in order {
        let p = points[i];
        if best.is_none_or(|b| !dominates(b, p)) {
            keep.push(i);
            if best.is_none_or(|b| p.1 > b.1) {
                best = Some(p);
            }
        }
    }
    keep.sort_unstable();
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute(points: &[(f64, f64)]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !points.iter().enumerate().any(|(j, q)| {
                    j != i
                        && q.0 <= points[i].0
                        && q.1 >= points[i].1
                        && (q.0 < points[i].0 || q.1 > points[i].1)
                })
            })
            .collect()
    }

    #[test]
    fn examples() {
        assert_eq!(pareto_frontier(&[(0.3, 0.5)]), vec![0]);
        assert_eq!(pareto_frontier(&[(0.2, 0.8), (0.1, 0.9)]), vec![1]);
        assert_eq!(pareto_frontier(&[(0.2, 0.8), (0.2, 0.8)]), vec![0, 1]);
        assert!(pareto_frontier(&[]).is_empty());
    }

    #[test]
    fn random_fifty_match_brute_force() {
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let pts: Vec<(f64, f64)> = (0..50)
                .map(|_| ((rng.random_range(0..10) as f64) / 10.0, (rng.random_range(0..10) as f64) / 10.0))
                .collect();
            assert_eq!(pareto_frontier(&pts), brute(&pts));
        }
    }

    proptest! {
        #[test]
        fn frontier_matches_brute_force(pts in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..40)) {
            prop_assert_eq!(pareto_frontier(&pts), brute(&pts));
        }
    }
}
