//! Behavioural features from one household's half-hourly series.

use crate::error::{Error, Result};
use crate::ingest::{day_index, slot_index, HouseholdSeries, TariffSchedule, TariffTier, SLOTS_PER_DAY};

use super::{FeatureVector, FEATURE_NAMES};

pub const DEFAULT_MAX_LAG: usize = 20;
pub const MIN_READINGS: usize = 48;

/// Features of one household: the 24 classifier features plus the mean
/// consumption, which is carried separately as the reconstruction secret.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdFeatures {
    pub household_id: String,
    pub features: FeatureVector,
    pub mean_consumption: f64,
}

/// Biased autocorrelation (autocovariance divided by n, normalized by lag 0)
/// for lags `1..=max_lag`. A constant series has zero autocorrelation.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|lag| {
            if c0 <= 0.0 || lag >= n {
                return 0.0;
            }
            let c: f64 = (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum();
            c / c0
        })
        .collect()
}

/// 1/l for the first lag whose autocorrelation drops below 1/e, else
/// 1/(max_lag + 1).
pub fn acf_decay_rate(acf: &[f64]) -> f64 {
    let threshold = (-1.0f64).exp();
    let lag = acf
        .iter()
        .position(|&r| r < threshold)
        .map_or(acf.len() + 1, |i| i + 1);
    1.0 / lag as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean_or(values: &[f64], fallback: f64) -> f64 {
    if values.is_empty() {
        fallback
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn extract_features(
    series: &HouseholdSeries,
    schedule: &TariffSchedule,
    max_lag: usize,
) -> Result<HouseholdFeatures> {
    let n = series.len();
    if n < MIN_READINGS {
        return Err(Error::InsufficientData(format!(
            "household {} has {n} readings, need at least {MIN_READINGS}",
            series.household_id
        )));
    }
    let kwh: Vec<f64> = series.kwh().collect();
    let total: f64 = kwh.iter().sum();
    let mean = total / n as f64;
    let ratio = |part: f64| if total > 0.0 { part / total } else { 0.0 };

    let mut high = 0.0;
    let mut low = 0.0;
    let mut peak = 0.0;
    let mut low_values = Vec::new();
    let mut slot_sum = [0.0; SLOTS_PER_DAY];
    let mut slot_count = [0usize; SLOTS_PER_DAY];
    let mut by_day: [Vec<f64>; 7] = Default::default();
    let mut z_weekend = Vec::new();
    let mut z_weekday = Vec::new();

    for (r, &z) in series.readings.iter().zip(&series.z_values) {
        let slot = slot_index(&r.timestamp);
        let day = day_index(&r.timestamp);
        let tier = match r.tariff_tier {
            TariffTier::Unknown => schedule.tier(day, slot),
            t => t,
        };
        match tier {
            TariffTier::High => high += r.kwh,
            TariffTier::Low => {
                low += r.kwh;
                low_values.push(r.kwh);
            }
            _ => {}
        }
        if schedule.in_peak(slot) {
            peak += r.kwh;
        }
        slot_sum[slot] += r.kwh;
        slot_count[slot] += 1;
        by_day[day].push(r.kwh);
        if day >= 5 {
            z_weekend.push(z);
        } else {
            z_weekday.push(z);
        }
    }

    let weekend_shift = if z_weekend.is_empty() || z_weekday.is_empty() {
        0.0
    } else {
        mean_or(&z_weekend, 0.0) - mean_or(&z_weekday, 0.0)
    };

    // Mean daily profile over the slots that were observed.
    let profile: Vec<f64> = slot_sum
        .iter()
        .zip(&slot_count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    let profile_total: f64 = profile.iter().sum();
    let load_entropy = if profile_total > 0.0 {
        -profile
            .iter()
            .map(|&v| v / profile_total)
            .filter(|&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    } else {
        0.0
    };
    let profile_mean = profile_total / profile.len() as f64;
    let profile_max = profile.iter().copied().fold(0.0, f64::max);
    let peak_to_mean_ratio = if profile_mean > 0.0 {
        profile_max / profile_mean
    } else {
        0.0
    };

    let low_max = low_values.iter().copied().fold(0.0, f64::max);
    let load_factor_low = if low_max > 0.0 {
        mean_or(&low_values, 0.0) / low_max
    } else {
        0.0
    };

    let acf = autocorrelation(&series.z_values, max_lag);
    let acf_mean = mean_or(&acf, 0.0);
    let acf_max = acf.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(-1.0);
    let acf_decay = acf_decay_rate(&acf);

    let std = (kwh.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let min = kwh.iter().copied().fold(f64::INFINITY, f64::min);
    let max = kwh.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let med = median(&mut kwh.clone());
    let day_means: Vec<f64> = by_day.iter().map(|d| mean_or(d, mean)).collect();
    let weekday: Vec<f64> = by_day[..5].iter().flatten().copied().collect();
    let weekend: Vec<f64> = by_day[5..].iter().flatten().copied().collect();
    let cv = if mean > 0.0 { std / mean } else { 0.0 };

    let mut values = vec![
        ratio(high),
        ratio(low),
        ratio(peak),
        weekend_shift,
        load_entropy,
        load_factor_low,
        acf_mean,
        acf_max,
        acf_decay,
        std,
        min,
        max,
        med,
        peak_to_mean_ratio,
    ];
    values.extend(day_means);
    values.push(mean_or(&weekday, mean));
    values.push(mean_or(&weekend, mean));
    values.push(cv);
    debug_assert_eq!(values.len(), FEATURE_NAMES.len());

    Ok(HouseholdFeatures {
        household_id: series.household_id.clone(),
        features: FeatureVector::new(values)?,
        mean_consumption: mean,
    })
}
