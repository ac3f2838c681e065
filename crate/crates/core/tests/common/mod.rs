#![allow(dead_code)]

use synthgrid::features::{build_table, FeatureTable, DEFAULT_MAX_LAG, MIN_READINGS};
use synthgrid::ingest::{synth_sample_dataset, TariffSchedule};

/// Labelled table from the bundled sample generator.
pub fn sample_table(seed: u64, households: usize, days: usize) -> FeatureTable {
    let schedule = TariffSchedule::default();
    let data = synth_sample_dataset(seed, households, days, &schedule).unwrap();
    build_table(&data.readings, &schedule, 0.75, MIN_READINGS, DEFAULT_MAX_LAG)
        .unwrap()
        .table
}

pub mod expr;
