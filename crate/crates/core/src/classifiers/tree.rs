//! CART trees for binary classification (gini / entropy) and regression
//! (squared error). Labels are handled as 0/1 targets so both tasks share
//! one split search over running sums.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::sample_without_replacement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
    SquaredError,
}

impl Criterion {
    /// Impurity of a node with `n` rows, target sum `s` and sum of squares
    /// `s2`.
    fn impurity(self, n: f64, s: f64, s2: f64) -> f64 {
        if n <= 0.0 {
            return 0.0;
        }
        let p = s / n;
        match self {
            Criterion::Gini => 2.0 * p * (1.0 - p),
            Criterion::Entropy => {
                let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
                h(p) + h(1.0 - p)
            }
            Criterion::SquaredError => (s2 / n - p * p).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Fitted tree. Leaf values are the mean target of the rows reaching the
/// leaf (the class-1 fraction for classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Builder<'a, R> {
    x: &'a Matrix<f64>,
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

impl<R: Rng> Builder<'_, R> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let value = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len().max(1) as f64;
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// `sorted` holds `d` consecutive segments of length `n`; segment `f`
    /// lists this node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<usize>, n: usize, depth: usize) -> usize {
        let d = self.x.cols();
        let rows = &sorted[..n];
        let (s, s2) = rows.iter().fold((0.0, 0.0), |(a, b), &i| (a + self.y[i], b + self.y[i] * self.y[i]));
        let nf = n as f64;
        let parent = self.params.criterion.impurity(nf, s, s2);
        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || n < self.params.min_samples_split.max(2) || parent <= 1e-15 {
            return self.leaf(rows);
        }
        let features: Vec<usize> = match self.params.max_features {
            Some(k) if k < d => sample_without_replacement(self.rng, d, k.max(1)),
            _ => (0..d).collect(),
        };

        let mut best: Option<(f64, usize, f64, usize)> = None;
        for &f in &features {
            let seg = &sorted[f * n..(f + 1) * n];
            let (mut ls, mut ls2) = (0.0, 0.0);
            for k in 0..n - 1 {
                let i = seg[k];
                let yi = self.y[i];
                ls += yi;
                ls2 += yi * yi;
                let (v, next) = (self.x[(i, f)], self.x[(seg[k + 1], f)]);
                if next <= v {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = nf - nl;
                let child = (nl * self.params.criterion.impurity(nl, ls, ls2)
                    + nr * self.params.criterion.impurity(nr, s - ls, s2 - ls2))
                    / nf;
                if best.is_none_or(|(b, _, _, _)| child < b - 1e-12) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some((child, f, threshold, k + 1));
                }
            }
        }
        let Some((_, feature, threshold, nl)) = best else {
            return self.leaf(rows);
        };
        for &i in &sorted[feature * n..(feature + 1) * n] {
            self.goes_left[i] = self.x[(i, feature)] <= threshold;
        }
        let nr = n - nl;
        let mut left = Vec::with_capacity(d * nl);
        let mut right = Vec::with_capacity(d * nr);
        for f in 0..d {
            for &i in &sorted[f * n..(f + 1) * n] {
                if self.goes_left[i] {
                    left.push(i);
                } else {
                    right.push(i);
                }
            }
        }
        drop(sorted);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let left = self.build(left, nl, depth + 1);
        let right = self.build(right, nr, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Per-feature orderings of all rows of `x`, for reuse across many trees.
#[derive(Debug, Clone)]
pub struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub fn new(x: &Matrix<f64>) -> Self {
        let order = (0..x.cols())
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.rows()).collect();
                idx.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }

    /// Segments for a multiset of rows given as per-row counts.
    fn segments(&self, counts: &[u32], n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n * self.order.len());
        for ord in &self.order {
            for &i in ord {
                for _ in 0..counts[i] {
                    out.push(i);
                }
            }
        }
        out
    }
}

impl Tree {
    /// Fit on the rows `rows` of `x` (duplicates allowed, e.g. a bootstrap).
    pub fn fit(x: &Matrix<f64>, y: &[f64], rows: &[usize], params: TreeParams, rng: &mut impl Rng) -> Self {
        Self::fit_presorted(x, y, rows, &Presorted::new(x), params, rng)
    }

    /// [`fit`](Self::fit) with orderings computed once by the caller.
    pub fn fit_presorted(
        x: &Matrix<f64>,
        y: &[f64],
        rows: &[usize],
        presorted: &Presorted,
        params: TreeParams,
        rng: &mut impl Rng,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            goes_left: vec![false; x.rows()],
        };
        if rows.is_empty() {
            b.nodes.push(Node::Leaf { value: 0.0 });
        } else {
            let mut counts = vec![0u32; x.rows()];
            for &i in rows {
                counts[i] += 1;
            }
            let sorted = presorted.segments(&counts, rows.len());
            b.build(sorted, rows.len(), 0);
        }
        Tree { nodes: b.nodes }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Overwrite leaf values; `f` maps a leaf index to its new value.
    pub fn set_leaf_values(&mut self, mut f: impl FnMut(usize) -> f64) {
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { value } = node {
                *value = f(id);
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn xor_is_fit_exactly_with_depth_two() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = [0.0, 1.0, 1.0, 0.0];
        for criterion in [Criterion::Gini, Criterion::Entropy] {
            let p = TreeParams {
                criterion,
                max_depth: Some(2),
                ..Default::default()
            };
            let t = Tree::fit(&x, &y, &[0, 1, 2, 3], p, &mut rng_from_seed(0));
            for i in 0..4 {
                assert_eq!(t.predict_row(x.row(i)), y[i]);
            }
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let x = Matrix::from_vec(8, 1, (0..8).map(f64::from).collect()).unwrap();
        let y: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        let p = TreeParams {
            max_depth: Some(1),
            ..Default::default()
        };
        let t = Tree::fit(&x, &y, &(0..8).collect::<Vec<_>>(), p, &mut rng_from_seed(0));
        assert!(t.depth() <= 1);
        let full = Tree::fit(&x, &y, &(0..8).collect::<Vec<_>>(), TreeParams::default(), &mut rng_from_seed(0));
        assert_eq!(full.n_leaves(), 8);
    }

    #[test]
    fn regression_leaves_are_means() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let y = [1.0, 3.0, 10.0, 14.0];
        let p = TreeParams {
            criterion: Criterion::SquaredError,
            max_depth: Some(1),
            ..Default::default()
        };
        let t = Tree::fit(&x, &y, &[0, 1, 2, 3], p, &mut rng_from_seed(0));
        assert_eq!(t.predict_row(&[0.5]), 2.0);
        assert_eq!(t.predict_row(&[10.5]), 12.0);
    }

    #[test]
    fn constant_features_give_a_single_leaf() {
        let x = Matrix::from_vec(4, 2, vec![1.0; 8]).unwrap();
        let t = Tree::fit(&x, &[0.0, 1.0, 0.0, 1.0], &[0, 1, 2, 3], TreeParams::default(), &mut rng_from_seed(0));
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict_row(&[1.0, 1.0]), 0.5);
    }
}
