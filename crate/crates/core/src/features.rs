//! Load transformation and the 35-entry per-AP descriptor.
//!
//! Layout (fixed order):
//!
//! | range  | content                                                              |
//! |--------|----------------------------------------------------------------------|
//! | 0..3   | bytes mean, std, 90th percentile                                     |
//! | 3..5   | active users mean, std                                               |
//! | 5..29  | {bytes, users} x {morning, afternoon, night} x {weekday, weekend} x {mean, std} |
//! | 29..35 | peak hour, peak-to-mean, night share, weekend/weekday, zero share, low-byte share |

use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{calendar_position, LoadSeries};
use crate::stats::{mean, pairwise_sum, population_std, quantile};

pub const FEATURE_COUNT: usize = 35;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    CubeRoot,
    Log1p,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::CubeRoot => x.cbrt(),
            Transform::Log1p => x.ln_1p(),
        }
    }
}

pub fn transform_load(series: &LoadSeries, method: Transform) -> LoadSeries {
    let mut out = series.clone();
    out.load.iter_mut().for_each(|v| *v = method.apply(*v));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Morning,
    Afternoon,
    Night,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Morning, Period::Afternoon, Period::Night];

    fn name(self) -> &'static str {
        match self {
            Period::Morning => "morning",
            Period::Afternoon => "afternoon",
            Period::Night => "night",
        }
    }
}

/// Day partition: morning `[morning_start, afternoon_start)`, afternoon
/// `[afternoon_start, night_start)`, night the remainder. Weekend is Saturday and Sunday.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalendarConfig {
    pub morning_start: u8,
    pub afternoon_start: u8,
    pub night_start: u8,
    pub tz_offset_hours: i32,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        Self {
            morning_start: 6,
            afternoon_start: 12,
            night_start: 18,
            tz_offset_hours: 0,
        }
    }
}

impl CalendarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.morning_start < self.afternoon_start
            && self.afternoon_start < self.night_start
            && self.night_start <= 24)
        {
            return Err(Error::Config(format!(
                "calendar boundaries must satisfy morning < afternoon < night <= 24, got {}/{}/{}",
                self.morning_start, self.afternoon_start, self.night_start
            )));
        }
        if self.tz_offset_hours.abs() > 14 {
            return Err(Error::Config(format!("timezone offset {} out of range", self.tz_offset_hours)));
        }
        Ok(())
    }

    pub fn period(&self, hour: f64) -> Period {
        if hour >= f64::from(self.morning_start) && hour < f64::from(self.afternoon_start) {
            Period::Morning
        } else if hour >= f64::from(self.afternoon_start) && hour < f64::from(self.night_start) {
            Period::Afternoon
        } else {
            Period::Night
        }
    }

    /// Local hour, period and weekend flag of a timestamp.
    pub fn locate(&self, t: i64) -> (f64, Period, bool) {
        let (hour, weekend) = calendar_position(t, self.tz_offset_hours);
        (hour, self.period(hour), weekend)
    }
}

/// Low/high thresholds splitting pooled transformed loads into thirds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByteTertiles {
    pub low: f64,
    pub high: f64,
}

pub fn compute_tertiles(pool: &[f64]) -> Result<ByteTertiles> {
    let low = quantile(pool, 1.0 / 3.0).ok_or(Error::Empty("tertile pool"))?;
    let high = quantile(pool, 2.0 / 3.0).ok_or(Error::Empty("tertile pool"))?;
    Ok(ByteTertiles { low, high })
}

/// Convenience: tertiles over every window of every (already transformed) series.
pub fn tertiles_of(series: &[LoadSeries]) -> Result<ByteTertiles> {
    let pool: Vec<f64> = series.iter().flat_map(|s| s.load.iter().copied()).collect();
    compute_tertiles(&pool)
}

pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut names: Vec<String> = ["bytes_mean", "bytes_std", "bytes_p90", "users_mean", "users_std"]
            .into_iter()
            .map(String::from)
            .collect();
        for metric in ["bytes", "users"] {
            for period in Period::ALL {
                for day in ["weekday", "weekend"] {
                    for stat in ["mean", "std"] {
                        names.push(format!("{metric}_{}_{day}_{stat}", period.name()));
                    }
                }
            }
        }
        names.extend(
            [
                "peak_hour",
                "peak_to_mean",
                "night_load_ratio",
                "weekend_weekday_ratio",
                "zero_window_fraction",
                "low_byte_fraction",
            ]
            .into_iter()
            .map(String::from),
        );
        debug_assert_eq!(names.len(), FEATURE_COUNT);
        names
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub ap_id: String,
    pub values: Vec<f64>,
    /// Which of the six (period, day type) strata had at least one window,
    /// in period-major order: morning/weekday, morning/weekend, afternoon/weekday, ...
    pub coverage: [bool; 6],
}

impl FeatureVector {
    pub fn names(&self) -> &'static [String] {
        feature_names()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_names().iter().position(|n| n == name).map(|i| self.values[i])
    }
}

fn stratum(period: Period, weekend: bool) -> usize {
    let p = match period {
        Period::Morning => 0,
        Period::Afternoon => 1,
        Period::Night => 2,
    };
    p * 2 + usize::from(weekend)
}

/// Byte totals split by day type; the pair sums to the series total.
pub fn day_type_totals(series: &LoadSeries, calendar: &CalendarConfig) -> (f64, f64) {
    let (mut weekday, mut weekend) = (Vec::new(), Vec::new());
    for (i, v) in series.load.iter().enumerate() {
        if calendar.locate(series.window_start(i)).2 {
            weekend.push(*v);
        } else {
            weekday.push(*v);
        }
    }
    (pairwise_sum(&weekday), pairwise_sum(&weekend))
}

/// Extracts the 35 features from an already transformed series.
pub fn extract_features(
    series: &LoadSeries,
    calendar: &CalendarConfig,
    tertiles: &ByteTertiles,
) -> Result<FeatureVector> {
    series.validate()?;
    calendar.validate()?;
    let load = &series.load;
    let users: Vec<f64> = series.active_users.iter().map(|&u| f64::from(u)).collect();
    let n = load.len() as f64;

    let mut bytes_by: [Vec<f64>; 6] = Default::default();
    let mut users_by: [Vec<f64>; 6] = Default::default();
    let mut hourly: [Vec<f64>; 24] = Default::default();
    let (mut weekday_loads, mut weekend_loads) = (Vec::new(), Vec::new());
    for (i, (&b, &u)) in load.iter().zip(&users).enumerate() {
        let (hour, period, weekend) = calendar.locate(series.window_start(i));
        let s = stratum(period, weekend);
        bytes_by[s].push(b);
        users_by[s].push(u);
        hourly[(hour.floor() as usize).min(23)].push(b);
        if weekend {
            weekend_loads.push(b);
        } else {
            weekday_loads.push(b);
        }
    }

    let mut values = Vec::with_capacity(FEATURE_COUNT);
    values.push(mean(load));
    values.push(population_std(load));
    values.push(quantile(load, 0.9).unwrap_or(0.0));
    values.push(mean(&users));
    values.push(population_std(&users));

    for by in [&bytes_by, &users_by] {
        for s in by.iter() {
            values.push(mean(s));
            values.push(population_std(s));
        }
    }

    let overall_mean = mean(load);
    let total = pairwise_sum(load);
    // Earliest hour wins ties.
    let (peak_hour, peak_mean) = hourly
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(h, v)| (h, mean(v)))
        .fold((0usize, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    let peak_mean = if peak_mean.is_finite() { peak_mean } else { 0.0 };
    values.push(peak_hour as f64 / 23.0);
    values.push(if overall_mean > 0.0 { peak_mean / overall_mean } else { 0.0 });

    let night_total: f64 = [stratum(Period::Night, false), stratum(Period::Night, true)]
        .iter()
        .map(|&s| pairwise_sum(&bytes_by[s]))
        .sum();
    values.push(if total > 0.0 { night_total / total } else { 0.0 });

    let weekday_total = pairwise_sum(&weekday_loads);
    let weekend_total = pairwise_sum(&weekend_loads);
    values.push(if weekday_total > 0.0 { weekend_total / weekday_total } else { 0.0 });

    values.push(load.iter().filter(|&&v| v == 0.0).count() as f64 / n);
    values.push(load.iter().filter(|&&v| v < tertiles.low).count() as f64 / n);

    debug_assert_eq!(values.len(), FEATURE_COUNT);
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "feature {} of {} is not finite",
            feature_names()[bad],
            series.ap_id
        )));
    }
    let mut coverage = [false; 6];
    for (c, s) in coverage.iter_mut().zip(&bytes_by) {
        *c = !s.is_empty();
    }
    Ok(FeatureVector {
        ap_id: series.ap_id.clone(),
        values,
        coverage,
    })
}

/// Per-column z-scoring with population statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose spread is numerically zero; they scale to 0.
    pub degenerate: Vec<bool>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "scaling needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, actual: r.len() });
        }
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        let mut degenerate = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let m = mean(&col);
            let s = population_std(&col);
            means.push(m);
            stds.push(s);
            degenerate.push(s <= 1e-12 * m.abs().max(1.0));
        }
        Ok(Self { mean: means, std: stds, degenerate })
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), actual: row.len() });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| if self.degenerate[j] { 0.0 } else { (v - self.mean[j]) / self.std[j] })
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }

    /// Inverse on non-degenerate columns; degenerate columns come back as their mean.
    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, z)| if self.degenerate[j] { self.mean[j] } else { z * self.std[j] + self.mean[j] })
            .collect()
    }
}

pub fn scale_features(matrix: &[FeatureVector]) -> Result<(Vec<Vec<f64>>, Scaler)> {
    let rows: Vec<Vec<f64>> = matrix.iter().map(|f| f.values.clone()).collect();
    let scaler = Scaler::fit(&rows)?;
    let scaled = scaler.transform(&rows)?;
    Ok((scaled, scaler))
}

/// Transforms every series, computes the pooled tertiles and extracts features.
pub fn extract_all(
    series: &[LoadSeries],
    method: Transform,
    calendar: &CalendarConfig,
) -> Result<(Vec<FeatureVector>, ByteTertiles)> {
    use rayon::prelude::*;
    let transformed: Vec<LoadSeries> = series.iter().map(|s| transform_load(s, method)).collect();
    let tertiles = tertiles_of(&transformed)?;
    let features = transformed
        .par_iter()
        .map(|s| extract_features(s, calendar, &tertiles))
        .collect::<Result<Vec<_>>>()?;
    Ok((features, tertiles))
}

pub fn write_features_csv<W: Write>(writer: W, features: &[FeatureVector]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["ap_id".to_owned()];
    header.extend(feature_names().iter().cloned());
    out.write_record(&header)?;
    for f in features {
        let mut row = vec![f.ap_id.clone()];
        row.extend(f.values.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("features csv", e))?;
    Ok(())
}

/// Reads a features CSV. The coverage mask is not stored in the file and comes back all-true.
pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("ap_id")
        .chain(feature_names().iter().map(String::as_str))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema("features csv header does not match the feature schema".into()));
    }
    let mut out = Vec::new();
    for row in input.records() {
        let row = row?;
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Schema(format!("bad feature value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureVector {
            ap_id: row.get(0).unwrap_or_default().to_owned(),
            values,
            coverage: [true; 6],
        });
    }
    Ok(out)
}
