//! Half-hourly meter readings: CSV parsing, tariff schedules, per-household
//! standardization, and the bundled synthetic sample generator.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDateTime, TimeZone, Timelike, Utc};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal, rng_from_seed, shuffle};

pub const SLOTS_PER_DAY: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TariffTier {
    High,
    Normal,
    Low,
    Unknown,
}

impl TariffTier {
    fn code(self) -> char {
        match self {
            TariffTier::High => 'H',
            TariffTier::Normal => 'N',
            TariffTier::Low => 'L',
            TariffTier::Unknown => '?',
        }
    }
}

impl fmt::Display for TariffTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TariffTier::High => "High",
            TariffTier::Normal => "Normal",
            TariffTier::Low => "Low",
            TariffTier::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

impl FromStr for TariffTier {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" | "h" => Ok(TariffTier::High),
            "normal" | "n" => Ok(TariffTier::Normal),
            "low" | "l" => Ok(TariffTier::Low),
            "" | "unknown" | "?" => Ok(TariffTier::Unknown),
            other => Err(format!("unknown tariff tier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawReading {
    pub household_id: String,
    pub timestamp: DateTime<Utc>,
    pub kwh: f64,
    pub tariff_tier: TariffTier,
}

/// Column names for the CSV reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub household_id: String,
    pub timestamp: String,
    pub kwh: String,
    pub tariff_tier: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            household_id: "household_id".into(),
            timestamp: "timestamp".into(),
            kwh: "kwh".into(),
            tariff_tier: Some("tariff_tier".into()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedReadings {
    pub readings: Vec<RawReading>,
    /// Rows whose kwh field was empty.
    pub dropped_count: usize,
    pub total_rows: usize,
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M%#z", "%Y-%m-%d %H:%M%#z"] {
        if let Ok(t) = DateTime::parse_from_str(s, fmt) {
            return Some(t.with_timezone(&Utc));
        }
    }
    let naive = s.trim_end_matches('Z');
    for fmt in [
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(naive, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    None
}

/// Parse readings from CSV. Rows with an empty kwh are dropped and counted.
pub fn parse_readings(source: impl Read, schema: &ColumnMapping) -> Result<ParsedReadings> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = find(&schema.household_id)?;
    let ts_col = find(&schema.timestamp)?;
    let kwh_col = find(&schema.kwh)?;
    let tier_col = match &schema.tariff_tier {
        Some(name) => headers.iter().position(|h| h == name),
        None => None,
    };

    let mut out = ParsedReadings::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        out.total_rows += 1;
        let field = |i: usize| record.get(i).unwrap_or("");

        let kwh_raw = field(kwh_col);
        if kwh_raw.is_empty() {
            out.dropped_count += 1;
            continue;
        }
        let household_id = field(id_col).to_string();
        if household_id.is_empty() {
            return Err(Error::Validation {
                line,
                message: "empty household_id".into(),
            });
        }
        let timestamp = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed timestamp `{}`", field(ts_col)),
        })?;
        if !(timestamp.minute() == 0 || timestamp.minute() == 30) || timestamp.second() != 0 {
            return Err(Error::Validation {
                line,
                message: format!("timestamp {timestamp} is not on a half-hour boundary"),
            });
        }
        let kwh: f64 = kwh_raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("malformed kwh `{kwh_raw}`"),
        })?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(Error::Validation {
                line,
                message: format!("kwh must be finite and non-negative, got {kwh_raw}"),
            });
        }
        let tariff_tier = match tier_col {
            Some(c) => field(c)
                .parse()
                .map_err(|message| Error::Parse { line, message })?,
            None => TariffTier::Unknown,
        };
        out.readings.push(RawReading {
            household_id,
            timestamp,
            kwh,
            tariff_tier,
        });
    }
    Ok(out)
}

pub fn read_readings_csv(path: &Path, schema: &ColumnMapping) -> Result<ParsedReadings> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_readings(std::io::BufReader::new(file), schema)
}

/// Write readings as `household_id,timestamp,kwh,tariff_tier`.
pub fn write_readings_csv(readings: &[RawReading], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "household_id,timestamp,kwh,tariff_tier")?;
    for r in readings {
        writeln!(
            out,
            "{},{},{:.6},{}",
            r.household_id,
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
            r.kwh,
            r.tariff_tier
        )?;
    }
    Ok(())
}

/// Weekly 7x48 tier grid (day 0 = Monday) plus the daily peak window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct TariffSchedule {
    grid: [[TariffTier; SLOTS_PER_DAY]; 7],
    /// Inclusive half-hour slot range.
    peak_window: (usize, usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    peak_window: [usize; 2],
    /// Seven strings of 48 characters from {H, N, L}, Monday first.
    grid: Vec<String>,
}

impl TryFrom<ScheduleFile> for TariffSchedule {
    type Error = String;

    fn try_from(f: ScheduleFile) -> std::result::Result<Self, String> {
        if f.grid.len() != 7 {
            return Err(format!("grid needs 7 days, got {}", f.grid.len()));
        }
        let mut grid = [[TariffTier::Normal; SLOTS_PER_DAY]; 7];
        for (day, row) in f.grid.iter().enumerate() {
            let chars: Vec<char> = row.chars().filter(|c| !c.is_whitespace()).collect();
            if chars.len() != SLOTS_PER_DAY {
                return Err(format!("day {day} has {} slots, expected 48", chars.len()));
            }
            for (slot, c) in chars.iter().enumerate() {
                grid[day][slot] = match c {
                    'H' => TariffTier::High,
                    'N' => TariffTier::Normal,
                    'L' => TariffTier::Low,
                    other => return Err(format!("day {day} slot {slot}: bad tier `{other}`")),
                };
            }
        }
        TariffSchedule::new(grid, (f.peak_window[0], f.peak_window[1])).map_err(|e| e.to_string())
    }
}

impl From<TariffSchedule> for ScheduleFile {
    fn from(s: TariffSchedule) -> Self {
        ScheduleFile {
            peak_window: [s.peak_window.0, s.peak_window.1],
            grid: s
                .grid
                .iter()
                .map(|day| day.iter().map(|t| t.code()).collect())
                .collect(),
        }
    }
}

impl Default for TariffSchedule {
    /// Weekdays 16:00-20:00 High, 00:00-06:00 Low every day, Normal elsewhere.
    fn default() -> Self {
        let mut grid = [[TariffTier::Normal; SLOTS_PER_DAY]; 7];
        for (day, row) in grid.iter_mut().enumerate() {
            for (slot, tier) in row.iter_mut().enumerate() {
                if slot < 12 {
                    *tier = TariffTier::Low;
                } else if day < 5 && (32..=39).contains(&slot) {
                    *tier = TariffTier::High;
                }
            }
        }
        Self {
            grid,
            peak_window: (32, 39),
        }
    }
}

impl TariffSchedule {
    pub fn new(grid: [[TariffTier; SLOTS_PER_DAY]; 7], peak_window: (usize, usize)) -> Result<Self> {
        if peak_window.0 > peak_window.1 || peak_window.1 >= SLOTS_PER_DAY {
            return Err(Error::Config(format!(
                "peak window {peak_window:?} must be a non-empty range within 0..48"
            )));
        }
        if grid.iter().flatten().any(|t| *t == TariffTier::Unknown) {
            return Err(Error::Config("schedule slots must map to a known tier".into()));
        }
        Ok(Self { grid, peak_window })
    }

    pub fn tier(&self, day_of_week: usize, slot: usize) -> TariffTier {
        self.grid[day_of_week % 7][slot % SLOTS_PER_DAY]
    }

    pub fn tier_at(&self, t: &DateTime<Utc>) -> TariffTier {
        self.tier(day_index(t), slot_index(t))
    }

    pub fn peak_window(&self) -> (usize, usize) {
        self.peak_window
    }

    pub fn in_peak(&self, slot: usize) -> bool {
        (self.peak_window.0..=self.peak_window.1).contains(&slot)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Load from a `.json` or `.toml` file (decided by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }
}

/// Monday = 0.
pub fn day_index(t: &DateTime<Utc>) -> usize {
    t.weekday().num_days_from_monday() as usize
}

pub fn slot_index(t: &DateTime<Utc>) -> usize {
    (t.hour() * 2 + t.minute() / 30) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesReading {
    pub timestamp: DateTime<Utc>,
    pub kwh: f64,
    pub tariff_tier: TariffTier,
}

/// One household's readings in time order with per-household z-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdSeries {
    pub household_id: String,
    pub readings: Vec<SeriesReading>,
    pub z_values: Vec<f64>,
}

impl HouseholdSeries {
    pub fn new(household_id: impl Into<String>, mut readings: Vec<SeriesReading>) -> Result<Self> {
        let household_id = household_id.into();
        readings.sort_by_key(|r| r.timestamp);
        if let Some(w) = readings.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
            return Err(Error::InvalidArgument(format!(
                "household {household_id}: duplicate timestamp {}",
                w[0].timestamp
            )));
        }
        let kwh: Vec<f64> = readings.iter().map(|r| r.kwh).collect();
        let z_values = standardize(&kwh);
        Ok(Self {
            household_id,
            readings,
            z_values,
        })
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn kwh(&self) -> impl Iterator<Item = f64> + '_ {
        self.readings.iter().map(|r| r.kwh)
    }
}

/// Z-scores with the population standard deviation; a constant series maps
/// to all zeros.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Debug, Clone, Default)]
pub struct GroupedSeries {
    /// Households ordered by id.
    pub series: Vec<HouseholdSeries>,
    /// Households dropped for having fewer than `min_readings` readings.
    pub excluded: Vec<(String, usize)>,
}

/// Group readings by household, order each by time, and standardize.
pub fn group_and_standardize(readings: &[RawReading], min_readings: usize) -> Result<GroupedSeries> {
    if readings.is_empty() {
        return Err(Error::Empty("no readings to group".into()));
    }
    let mut groups: BTreeMap<&str, Vec<SeriesReading>> = BTreeMap::new();
    for r in readings {
        groups.entry(&r.household_id).or_default().push(SeriesReading {
            timestamp: r.timestamp,
            kwh: r.kwh,
            tariff_tier: r.tariff_tier,
        });
    }
    let mut excluded = Vec::new();
    let kept: Vec<(&str, Vec<SeriesReading>)> = groups
        .into_iter()
        .filter_map(|(id, rs)| {
            if rs.len() < min_readings {
                excluded.push((id.to_string(), rs.len()));
                None
            } else {
                Some((id, rs))
            }
        })
        .collect();
    let series = kept
        .into_par_iter()
        .map(|(id, rs)| HouseholdSeries::new(id, rs))
        .collect::<Result<Vec<_>>>()?;
    if !excluded.is_empty() {
        log::warn!(
            "excluded {} households with fewer than {min_readings} readings",
            excluded.len()
        );
    }
    Ok(GroupedSeries { series, excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    /// Evening-peak dominated usage; the majority class.
    PeakHeavy,
    /// Usage shifted into the overnight low-tariff window.
    OffPeakHeavy,
}

#[derive(Debug, Clone)]
pub struct SampleDataset {
    pub readings: Vec<RawReading>,
    /// Archetype per household, ordered by household id.
    pub archetypes: Vec<(String, Archetype)>,
}

fn archetype_profile(kind: Archetype) -> [f64; SLOTS_PER_DAY] {
    let mut p = [0.0; SLOTS_PER_DAY];
    for (slot, v) in p.iter_mut().enumerate() {
        let h = slot as f64 / 2.0;
        let bump = |centre: f64, width: f64, height: f64| {
            height * (-0.5 * ((h - centre) / width).powi(2)).exp()
        };
        *v = 0.25
            + match kind {
                Archetype::PeakHeavy => {
                    bump(7.5, 1.0, 0.45) + bump(18.0, 1.6, 1.3) + bump(13.0, 2.5, 0.2)
                }
                Archetype::OffPeakHeavy => {
                    bump(2.5, 1.6, 1.0) + bump(7.5, 1.0, 0.3) + bump(18.0, 1.6, 0.45)
                }
            };
    }
    p
}

/// Deterministic stand-in for a real smart-meter trial: two household
/// archetypes in a 3:1 ratio with per-household mixing and multiplicative
/// log-normal noise. Timestamps start on Monday 2013-01-07 00:00 UTC.
pub fn synth_sample_dataset(
    seed: u64,
    n_households: usize,
    n_days: usize,
    schedule: &TariffSchedule,
) -> Result<SampleDataset> {
    if n_households < 2 {
        return Err(Error::InvalidArgument("need at least 2 households".into()));
    }
    if n_days < 7 {
        return Err(Error::InvalidArgument("need at least 7 days".into()));
    }
    let n_off_peak = ((n_households as f64) * 0.25).round().max(1.0) as usize;
    let mut kinds: Vec<Archetype> = (0..n_households)
        .map(|i| {
            if i < n_off_peak {
                Archetype::OffPeakHeavy
            } else {
                Archetype::PeakHeavy
            }
        })
        .collect();
    shuffle(&mut rng_from_seed(derive_seed(seed, &[0])), &mut kinds);

    let start = Utc.with_ymd_and_hms(2013, 1, 7, 0, 0, 0).single().expect("valid date");
    let peak = archetype_profile(Archetype::PeakHeavy);
    let off = archetype_profile(Archetype::OffPeakHeavy);
    let width = n_households.to_string().len().max(3);

    let per_household: Vec<(Vec<RawReading>, (String, Archetype))> = kinds
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut rng = rng_from_seed(derive_seed(seed, &[1, i as u64]));
            let id = format!("MAC{:0width$}", i + 1, width = width);
            // Mixing weight toward the off-peak shape, uniform within the archetype band.
            let mix: f64 = match kind {
                Archetype::PeakHeavy => rng.random_range(0.0..0.45),
                Archetype::OffPeakHeavy => rng.random_range(0.55..1.0),
            };
            let level = (0.25f64.ln() + 0.35 * normal(&mut rng)).exp();
            let weekend_gain = 1.0 + 0.25 * normal(&mut rng);
            let noise_sd = 0.25 + 0.15 * rng.random::<f64>();
            let persistence = 0.5 + 0.4 * rng.random::<f64>();
            let mut ar = 0.0;
            let mut out = Vec::with_capacity(n_days * SLOTS_PER_DAY);
            for day in 0..n_days {
                let day_scale = (0.15 * normal(&mut rng)).exp();
                for slot in 0..SLOTS_PER_DAY {
                    let timestamp = start + Duration::minutes(30 * (day * SLOTS_PER_DAY + slot) as i64);
                    let dow = day_index(&timestamp);
                    let shape = (1.0 - mix) * peak[slot] + mix * off[slot];
                    let weekend = if dow >= 5 { weekend_gain.max(0.2) } else { 1.0 };
                    ar = persistence * ar + (1.0 - persistence * persistence).sqrt() * normal(&mut rng);
                    let kwh = level * shape * weekend * day_scale * (noise_sd * ar).exp();
                    out.push(RawReading {
                        household_id: id.clone(),
                        timestamp,
                        kwh: (kwh * 1e6).round() / 1e6,
                        tariff_tier: schedule.tier_at(&timestamp),
                    });
                }
            }
            (out, (id, kind))
        })
        .collect();

    let mut readings = Vec::with_capacity(n_households * n_days * SLOTS_PER_DAY);
    let mut archetypes = Vec::with_capacity(n_households);
    for (rs, a) in per_household {
        readings.extend(rs);
        archetypes.push(a);
    }
    Ok(SampleDataset {
        readings,
        archetypes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV3: &str = "household_id,timestamp,kwh,tariff_tier\n\
                        H1,2013-01-05T00:00Z,0.123,Normal\n\
                        H1,2013-01-05T00:30Z,,Normal\n\
                        H2,2013-01-05T00:00:00Z,0.5,High\n";

    #[test]
    fn parses_rows_and_drops_blank_kwh() {
        let parsed = parse_readings(CSV3.as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(parsed.readings.len(), 2);
        assert_eq!(parsed.dropped_count, 1);
        assert_eq!(parsed.readings.len() + parsed.dropped_count, parsed.total_rows);
        let r = &parsed.readings[0];
        assert_eq!(r.household_id, "H1");
        assert_eq!(r.kwh, 0.123);
        assert_eq!(r.tariff_tier, TariffTier::Normal);
        assert_eq!(r.timestamp, Utc.with_ymd_and_hms(2013, 1, 5, 0, 0, 0).unwrap());
    }

    #[test]
    fn negative_kwh_names_its_line() {
        let csv = "household_id,timestamp,kwh\nH1,2013-01-05T00:00Z,0.1\nH1,2013-01-05T00:30Z,-1\n";
        match parse_readings(csv.as_bytes(), &ColumnMapping::default()) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_timestamp_is_a_parse_error() {
        let csv = "household_id,timestamp,kwh\nH1,yesterday,0.1\n";
        assert!(matches!(
            parse_readings(csv.as_bytes(), &ColumnMapping::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let off_grid = "household_id,timestamp,kwh\nH1,2013-01-05T00:10Z,0.1\n";
        assert!(matches!(
            parse_readings(off_grid.as_bytes(), &ColumnMapping::default()),
            Err(Error::Validation { line: 2, .. })
        ));
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "id,timestamp,kwh\nH1,2013-01-05T00:00Z,0.1\n";
        assert!(matches!(
            parse_readings(csv.as_bytes(), &ColumnMapping::default()),
            Err(Error::MissingColumn(c)) if c == "household_id"
        ));
    }

    fn reading(id: &str, slot: i64, kwh: f64) -> RawReading {
        RawReading {
            household_id: id.into(),
            timestamp: Utc.with_ymd_and_hms(2013, 1, 7, 0, 0, 0).unwrap() + Duration::minutes(30 * slot),
            kwh,
            tariff_tier: TariffTier::Unknown,
        }
    }

    #[test]
    fn z_scores_use_population_std() {
        let rs: Vec<_> = [1.0, 2.0, 3.0].iter().enumerate().map(|(i, &k)| reading("A", i as i64, k)).collect();
        let g = group_and_standardize(&rs, 1).unwrap();
        let z = &g.series[0].z_values;
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_standardizes_to_zero() {
        let rs: Vec<_> = (0..3).map(|i| reading("A", i, 5.0)).collect();
        let g = group_and_standardize(&rs, 1).unwrap();
        assert_eq!(g.series[0].z_values, vec![0.0; 3]);
    }

    #[test]
    fn interleaved_households_are_grouped_independently() {
        let rs = vec![
            reading("B", 1, 10.0),
            reading("A", 0, 1.0),
            reading("B", 0, 20.0),
            reading("A", 1, 3.0),
        ];
        let g = group_and_standardize(&rs, 1).unwrap();
        assert_eq!(g.series.len(), 2);
        assert_eq!(g.series[0].household_id, "A");
        assert_eq!(g.series[0].z_values, vec![-1.0, 1.0]);
        // B sorted by time: 20 then 10.
        assert_eq!(g.series[1].z_values, vec![1.0, -1.0]);
    }

    #[test]
    fn short_households_are_excluded_and_empty_input_fails() {
        let rs: Vec<_> = (0..3).map(|i| reading("A", i, i as f64)).collect();
        let g = group_and_standardize(&rs, 48).unwrap();
        assert!(g.series.is_empty());
        assert_eq!(g.excluded, vec![("A".to_string(), 3)]);
        assert!(matches!(group_and_standardize(&[], 48), Err(Error::Empty(_))));
    }

    #[test]
    fn default_schedule_layout() {
        let s = TariffSchedule::default();
        assert_eq!(s.tier(0, 32), TariffTier::High);
        assert_eq!(s.tier(5, 32), TariffTier::Normal);
        assert_eq!(s.tier(6, 0), TariffTier::Low);
        assert_eq!(s.tier(2, 20), TariffTier::Normal);
        assert_eq!(s.peak_window(), (32, 39));
    }

    #[test]
    fn schedule_toml_round_trip() {
        let s = TariffSchedule::default();
        let text = toml::to_string(&s).unwrap();
        assert_eq!(TariffSchedule::from_toml_str(&text).unwrap(), s);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(TariffSchedule::from_json_str(&json).unwrap(), s);
        assert!(TariffSchedule::from_toml_str("peak_window = [40, 32]\ngrid = []").is_err());
    }

    #[test]
    fn sample_dataset_is_deterministic() {
        let s = TariffSchedule::default();
        let a = synth_sample_dataset(7, 10, 7, &s).unwrap();
        let b = synth_sample_dataset(7, 10, 7, &s).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_readings_csv(&a.readings, &mut ba).unwrap();
        write_readings_csv(&b.readings, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let parsed = parse_readings(ba.as_slice(), &ColumnMapping::default()).unwrap();
        assert_eq!(parsed.readings.len(), 10 * 7 * 48);
        assert!(synth_sample_dataset(7, 1, 7, &s).is_err());
        assert!(synth_sample_dataset(7, 2, 6, &s).is_err());
    }

    #[test]
    fn sample_dataset_size_and_archetype_ratio() {
        let d = synth_sample_dataset(7, 200, 28, &TariffSchedule::default()).unwrap();
        assert_eq!(d.readings.len(), 200 * 28 * 48);
        let majority = d
            .archetypes
            .iter()
            .filter(|(_, a)| *a == Archetype::PeakHeavy)
            .count() as f64
            / 200.0;
        assert!((0.70..=0.80).contains(&majority), "{majority}");
        assert!(d.readings.iter().all(|r| r.kwh >= 0.0));
    }
}
