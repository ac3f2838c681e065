//! Privacy attacks against released tables: shadow-model membership
//! inference on a classifier trained on the table, and reconstruction of
//! the secret column from the published features.

mod mia;
mod recon;
mod regressors;

pub use mia::{mia_attack, mia_for_table, AttackKind, AttackSummary, MiaConfig, MiaResult, ShadowKind};
pub use recon::{
    pearson, privacy_risk_score, r_squared, recon_baseline, reconstruction_attack, reconstruction_with_baseline,
    ReconBaseline, ReconConfig, ReconResult, RegressorScore,
};
pub use regressors::{fit_regressor, lasso, lasso_alpha, ridge, FittedRegressor, LinearModel, RegressorKind};

use crate::error::{Error, Result};

/// Rank-based (Mann-Whitney) AUC of `scores` for `labels` (1 = positive),
/// with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("AUC scores contain NaN".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
