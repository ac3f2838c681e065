//! Household feature vectors, the PC1 responsiveness score, and quantile labels.

mod extract;
mod score;
mod table;

use rayon::prelude::*;

pub use extract::{
    acf_decay_rate, autocorrelation, extract_features, HouseholdFeatures, DEFAULT_MAX_LAG, MIN_READINGS,
};
pub use score::{assign_labels, empirical_quantile, fit_score_model, score, ScoreModel};
pub use table::{FeatureTable, UnlabeledTable};

use crate::error::{Error, Result};
use crate::ingest::{HouseholdSeries, TariffSchedule};

/// Feature roster, in column order.
pub const FEATURE_NAMES: [&str; 24] = [
    "high_usage_ratio",
    "low_usage_ratio",
    "peak_hour_ratio",
    "weekend_shift",
    "load_entropy",
    "load_factor_low",
    "acf_mean",
    "acf_max",
    "acf_decay_rate",
    "std_consumption",
    "min_consumption",
    "max_consumption",
    "median_consumption",
    "peak_to_mean_ratio",
    "mon_mean",
    "tue_mean",
    "wed_mean",
    "thu_mean",
    "fri_mean",
    "sat_mean",
    "sun_mean",
    "weekday_mean",
    "weekend_mean",
    "coef_variation",
];

/// Column holding average consumption, the reconstruction-attack secret.
pub const SECRET_NAME: &str = "mean_consumption";

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

pub fn default_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feature {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn names(&self) -> &'static [&'static str] {
        &FEATURE_NAMES
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Extract features for many households in parallel, preserving order.
pub fn extract_all(
    series: &[HouseholdSeries],
    schedule: &TariffSchedule,
    max_lag: usize,
) -> Result<UnlabeledTable> {
    let rows = series
        .par_iter()
        .map(|s| extract_features(s, schedule, max_lag))
        .collect::<Result<Vec<_>>>()?;
    UnlabeledTable::from_households(rows)
}

/// Labelled table built from raw readings, with the fitted score model and
/// the households excluded for having too few readings.
#[derive(Debug, Clone)]
pub struct BuiltTable {
    pub table: FeatureTable,
    pub score_model: ScoreModel,
    pub excluded: Vec<(String, usize)>,
}

/// Group, standardize, extract features, and label at quantile `q`.
pub fn build_table(
    readings: &[crate::ingest::RawReading],
    schedule: &TariffSchedule,
    q: f64,
    min_readings: usize,
    max_lag: usize,
) -> Result<BuiltTable> {
    let grouped = crate::ingest::group_and_standardize(readings, min_readings)?;
    let unlabeled = extract_all(&grouped.series, schedule, max_lag)?;
    let score_model = fit_score_model(&unlabeled.features, &unlabeled.names, q)?;
    let table = assign_labels(&score_model, &unlabeled)?;
    Ok(BuiltTable {
        table,
        score_model,
        excluded: grouped.excluded,
    })
}
