//! Association-record loading and per-AP load series derivation.
//!
//! Each session's byte total is spread equally over the `w`-sized windows its
//! `[start, end)` interval intersects. A window also counts the session's client
//! as active; a client is counted once per window even with several sessions.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime};
use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// 2019-01-07 00:00:00 UTC, a Monday. Default origin for synthetic data.
pub const DEFAULT_SYNTHETIC_ORIGIN: i64 = 1_546_819_200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub ap_id: String,
    pub client_id: String,
    /// UTC epoch seconds.
    pub start_time: i64,
    pub end_time: i64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl AssociationRecord {
    pub fn new(
        ap_id: impl Into<String>,
        client_id: impl Into<String>,
        start_time: i64,
        end_time: i64,
        bytes_up: u64,
        bytes_down: u64,
    ) -> Result<Self> {
        if end_time < start_time {
            return Err(Error::InvalidInput(format!(
                "end_time {end_time} precedes start_time {start_time}"
            )));
        }
        Ok(Self {
            ap_id: ap_id.into(),
            client_id: client_id.into(),
            start_time,
            end_time,
            bytes_up,
            bytes_down,
        })
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    pub fn duration(&self) -> i64 {
        self.end_time - self.start_time
    }
}

/// Column names used to locate record fields in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub ap_id: String,
    pub client_id: String,
    pub start_time: String,
    pub end_time: String,
    pub bytes_up: String,
    pub bytes_down: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            ap_id: "ap_id".into(),
            client_id: "client_id".into(),
            start_time: "start_time".into(),
            end_time: "end_time".into(),
            bytes_up: "bytes_up".into(),
            bytes_down: "bytes_down".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub records: Vec<AssociationRecord>,
    pub errors: Vec<RowError>,
}

/// Parses an epoch-seconds integer, an RFC 3339 timestamp, or a naive
/// `YYYY-MM-DD[T ]HH:MM:SS` timestamp taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(secs) = raw.parse::<f64>() {
        if secs.is_finite() {
            return Some(secs.floor() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

/// Reads association records from CSV. Malformed rows are skipped and reported.
pub fn parse_records<R: Read>(source: R, schema: &ColumnMap) -> Result<ParseReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("required column `{name}` not found")))
    };
    let idx = [
        find(&schema.ap_id)?,
        find(&schema.client_id)?,
        find(&schema.start_time)?,
        find(&schema.end_time)?,
        find(&schema.bytes_up)?,
        find(&schema.bytes_down)?,
    ];

    let mut report = ParseReport::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, &idx) {
            Ok(record) => report.records.push(record),
            Err(message) => {
                warn!("skipping record on line {line}: {message}");
                report.errors.push(RowError { line, message });
            }
        }
    }
    Ok(report)
}

fn parse_row(row: &csv::StringRecord, idx: &[usize; 6]) -> std::result::Result<AssociationRecord, String> {
    let field = |i: usize| row.get(idx[i]).ok_or_else(|| format!("missing field {}", idx[i]));
    let ap_id = field(0)?;
    let client_id = field(1)?;
    if ap_id.is_empty() {
        return Err("empty ap_id".into());
    }
    let start = field(2)?;
    let start = parse_timestamp(start).ok_or_else(|| format!("unparseable start_time `{start}`"))?;
    let end = field(3)?;
    let end = parse_timestamp(end).ok_or_else(|| format!("unparseable end_time `{end}`"))?;
    let bytes = |i: usize| -> std::result::Result<u64, String> {
        let raw = field(i)?;
        raw.parse::<u64>()
            .or_else(|_| match raw.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(v.round() as u64),
                _ => Err(()),
            })
            .map_err(|_| format!("invalid byte count `{raw}`"))
    };
    let up = bytes(4)?;
    let down = bytes(5)?;
    AssociationRecord::new(ap_id, client_id, start, end, up, down).map_err(|e| e.to_string())
}

/// Half-open interval `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: i64,
    pub end: i64,
}

impl Span {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidInput(format!("empty span [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    /// Smallest whole-day span (UTC midnight aligned) containing every record.
    pub fn covering_days(records: &[AssociationRecord]) -> Option<Self> {
        let first = records.iter().map(|r| r.start_time).min()?;
        let last = records.iter().map(|r| r.end_time.max(r.start_time + 1)).max()?;
        let start = first.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
        let end = (last + SECONDS_PER_DAY - 1).div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
        Some(Self { start, end })
    }

    pub fn window_count(&self, step_w: u64) -> usize {
        let len = (self.end - self.start) as u64;
        len.div_ceil(step_w) as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// Uplink and downlink bytes summed into `load`.
    #[default]
    Summed,
    /// `load` still holds the sum; `uplink` and `downlink` are filled as well.
    Separate,
}

/// Per-AP load and active-user series on a regular grid of `step_w` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub ap_id: String,
    pub origin: i64,
    pub step_w: u64,
    pub load: Vec<f64>,
    pub active_users: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uplink: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downlink: Option<Vec<f64>>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn window_start(&self, index: usize) -> i64 {
        self.origin + index as i64 * self.step_w as i64
    }

    pub fn total_load(&self) -> f64 {
        crate::stats::pairwise_sum(&self.load)
    }

    pub fn validate(&self) -> Result<()> {
        if self.load.is_empty() {
            return Err(Error::InvalidInput(format!("series {} is empty", self.ap_id)));
        }
        if self.load.len() != self.active_users.len() {
            return Err(Error::InvalidInput(format!(
                "series {}: {} load values but {} user counts",
                self.ap_id,
                self.load.len(),
                self.active_users.len()
            )));
        }
        if self.step_w == 0 {
            return Err(Error::InvalidInput(format!("series {}: zero step", self.ap_id)));
        }
        if let Some(v) = self.load.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("series {}: load value {v}", self.ap_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct ApAccumulator {
    load: Vec<f64>,
    uplink: Vec<f64>,
    downlink: Vec<f64>,
    /// (window, client) presence pairs; deduplicated when the series is built.
    presence: Vec<(u32, u32)>,
}

/// Incremental form of [`derive_load_series`]. Batches may be added in any
/// order, and accumulators built over disjoint record batches can be merged.
#[derive(Debug, Clone)]
pub struct LoadAccumulator {
    step_w: u64,
    span: Span,
    mode: ChannelMode,
    windows: usize,
    clients: HashMap<String, u32>,
    client_names: Vec<String>,
    aps: BTreeMap<String, ApAccumulator>,
}

impl LoadAccumulator {
    pub fn new(step_w: u64, span: Span, mode: ChannelMode) -> Result<Self> {
        if step_w == 0 {
            return Err(Error::InvalidInput("step_w must be positive".into()));
        }
        if span.end <= span.start {
            return Err(Error::InvalidInput("span must be non-empty".into()));
        }
        Ok(Self {
            step_w,
            span,
            mode,
            windows: span.window_count(step_w),
            clients: HashMap::new(),
            client_names: Vec::new(),
            aps: BTreeMap::new(),
        })
    }

    fn client_index(&mut self, client: &str) -> u32 {
        if let Some(&i) = self.clients.get(client) {
            return i;
        }
        let i = self.client_names.len() as u32;
        self.clients.insert(client.to_owned(), i);
        self.client_names.push(client.to_owned());
        i
    }

    fn ap_entry(&mut self, ap_id: &str) -> &mut ApAccumulator {
        let windows = self.windows;
        let separate = self.mode == ChannelMode::Separate;
        self.aps.entry(ap_id.to_owned()).or_insert_with(|| ApAccumulator {
            load: vec![0.0; windows],
            uplink: if separate { vec![0.0; windows] } else { Vec::new() },
            downlink: if separate { vec![0.0; windows] } else { Vec::new() },
            presence: Vec::new(),
        })
    }

    /// Adds one record. Returns `false` if the record lies outside the span.
    pub fn add(&mut self, record: &AssociationRecord) -> Result<bool> {
        if record.end_time < record.start_time {
            return Err(Error::InvalidInput(format!(
                "record for {} ends before it starts",
                record.ap_id
            )));
        }
        // Every AP seen gets a series, even if all of its records fall outside the span.
        self.ap_entry(&record.ap_id);
        let Some((first, last, fraction)) = self.coverage(record) else {
            return Ok(false);
        };
        let n_steps = (last - first + 1) as f64;
        let share = fraction / n_steps;
        let total = record.total_bytes() as f64 * share;
        let up = record.bytes_up as f64 * share;
        let down = record.bytes_down as f64 * share;
        let client = self.client_index(&record.client_id);
        let separate = self.mode == ChannelMode::Separate;
        let acc = self.ap_entry(&record.ap_id);
        for w in first..=last {
            acc.load[w] += total;
            if separate {
                acc.uplink[w] += up;
                acc.downlink[w] += down;
            }
            acc.presence.push((w as u32, client));
        }
        Ok(true)
    }

    /// First and last overlapped window plus the in-span fraction of the
    /// session's bytes, or `None` when the record does not touch the span.
    fn coverage(&self, record: &AssociationRecord) -> Option<(usize, usize, f64)> {
        let span = self.span;
        let w = self.step_w as i64;
        if record.start_time == record.end_time {
            if record.start_time < span.start || record.start_time >= span.end {
                return None;
            }
            let win = ((record.start_time - span.start) / w) as usize;
            return Some((win, win, 1.0));
        }
        let start = record.start_time.max(span.start);
        let end = record.end_time.min(span.end);
        if end <= start {
            return None;
        }
        let fraction = (end - start) as f64 / record.duration() as f64;
        let first = ((start - span.start) / w) as usize;
        let last = ((end - span.start + w - 1) / w - 1) as usize;
        Some((first, last.min(self.windows - 1), fraction))
    }

    pub fn extend<'a>(&mut self, records: impl IntoIterator<Item = &'a AssociationRecord>) -> Result<()> {
        for r in records {
            self.add(r)?;
        }
        Ok(())
    }

    /// Folds another accumulator built with the same grid into this one.
    pub fn merge(&mut self, other: LoadAccumulator) -> Result<()> {
        if other.step_w != self.step_w || other.span != self.span || other.mode != self.mode {
            return Err(Error::InvalidInput(
                "cannot merge accumulators with different grids".into(),
            ));
        }
        let remap: Vec<u32> = other
            .client_names
            .iter()
            .map(|name| self.client_index(name))
            .collect();
        for (ap, acc) in other.aps {
            let mine = self.ap_entry(&ap);
            for (a, b) in mine.load.iter_mut().zip(&acc.load) {
                *a += b;
            }
            for (a, b) in mine.uplink.iter_mut().zip(&acc.uplink) {
                *a += b;
            }
            for (a, b) in mine.downlink.iter_mut().zip(&acc.downlink) {
                *a += b;
            }
            mine.presence
                .extend(acc.presence.iter().map(|&(w, c)| (w, remap[c as usize])));
        }
        Ok(())
    }

    pub fn finish(self) -> Vec<LoadSeries> {
        let windows = self.windows;
        let separate = self.mode == ChannelMode::Separate;
        self.aps
            .into_iter()
            .map(|(ap_id, mut acc)| {
                acc.presence.sort_unstable();
                acc.presence.dedup();
                let mut active_users = vec![0u32; windows];
                for (w, _) in &acc.presence {
                    active_users[*w as usize] += 1;
                }
                LoadSeries {
                    ap_id,
                    origin: self.span.start,
                    step_w: self.step_w,
                    load: acc.load,
                    active_users,
                    uplink: separate.then_some(acc.uplink),
                    downlink: separate.then_some(acc.downlink),
                }
            })
            .collect()
    }
}

/// Builds one aligned series per distinct AP, sorted by `ap_id`.
pub fn derive_load_series(
    records: &[AssociationRecord],
    step_w: u64,
    span: Span,
    mode: ChannelMode,
) -> Result<Vec<LoadSeries>> {
    let mut acc = LoadAccumulator::new(step_w, span, mode)?;
    acc.extend(records)?;
    Ok(acc.finish())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ap_count: usize,
    pub record_count: usize,
    pub span_days: u64,
    pub window_count: usize,
    pub step_w: u64,
    pub origin: i64,
}

pub fn summarize(records: &[AssociationRecord], series: &[LoadSeries]) -> IngestSummary {
    let Some(first) = series.first() else {
        return IngestSummary {
            record_count: records.len(),
            ..Default::default()
        };
    };
    let window_count = first.len();
    let span_secs = window_count as u64 * first.step_w;
    IngestSummary {
        ap_count: series.len(),
        record_count: records.len(),
        span_days: span_secs.div_ceil(SECONDS_PER_DAY as u64),
        window_count,
        step_w: first.step_w,
        origin: first.origin,
    }
}

/// Writes the long-format series file: `ap_id,window_index,load_bytes,active_users`
/// (plus `uplink_bytes,downlink_bytes` when channels are separate).
pub fn write_series_csv<W: Write>(writer: W, series: &[LoadSeries]) -> Result<()> {
    let separate = series.iter().any(|s| s.uplink.is_some());
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["ap_id", "window_index", "load_bytes", "active_users"];
    if separate {
        header.extend(["uplink_bytes", "downlink_bytes"]);
    }
    out.write_record(&header)?;
    for s in series {
        for (i, (load, users)) in s.load.iter().zip(&s.active_users).enumerate() {
            let mut row = vec![s.ap_id.clone(), i.to_string(), load.to_string(), users.to_string()];
            if separate {
                let pick = |c: &Option<Vec<f64>>| c.as_ref().map(|v| v[i]).unwrap_or(0.0).to_string();
                row.push(pick(&s.uplink));
                row.push(pick(&s.downlink));
            }
            out.write_record(&row)?;
        }
    }
    out.flush().map_err(|e| Error::io("series csv", e))?;
    Ok(())
}

/// Reads the file written by [`write_series_csv`]; grid metadata comes from the summary sidecar.
pub fn read_series_csv<R: Read>(reader: R, summary: &IngestSummary) -> Result<Vec<LoadSeries>> {
    let mut input = csv::Reader::from_reader(reader);
    let headers = input.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("series csv lacks `{name}`")));
    let (c_ap, c_idx, c_load, c_users) = (
        required("ap_id")?,
        required("window_index")?,
        required("load_bytes")?,
        required("active_users")?,
    );
    let (c_up, c_down) = (col("uplink_bytes"), col("downlink_bytes"));
    let n = summary.window_count;
    let mut by_ap: BTreeMap<String, LoadSeries> = BTreeMap::new();
    for row in input.records() {
        let row = row?;
        let bad = |what: &str| Error::Schema(format!("bad {what} in series csv: {row:?}"));
        let ap = row.get(c_ap).ok_or_else(|| bad("ap_id"))?;
        let idx: usize = row.get(c_idx).and_then(|v| v.parse().ok()).ok_or_else(|| bad("window_index"))?;
        if idx >= n {
            return Err(bad("window_index"));
        }
        let load: f64 = row.get(c_load).and_then(|v| v.parse().ok()).ok_or_else(|| bad("load_bytes"))?;
        let users: u32 = row.get(c_users).and_then(|v| v.parse().ok()).ok_or_else(|| bad("active_users"))?;
        let s = by_ap.entry(ap.to_owned()).or_insert_with(|| LoadSeries {
            ap_id: ap.to_owned(),
            origin: summary.origin,
            step_w: summary.step_w,
            load: vec![0.0; n],
            active_users: vec![0; n],
            uplink: c_up.map(|_| vec![0.0; n]),
            downlink: c_down.map(|_| vec![0.0; n]),
        });
        s.load[idx] = load;
        s.active_users[idx] = users;
        if let (Some(c), Some(v)) = (c_up, s.uplink.as_mut()) {
            v[idx] = row.get(c).and_then(|x| x.parse().ok()).ok_or_else(|| bad("uplink_bytes"))?;
        }
        if let (Some(c), Some(v)) = (c_down, s.downlink.as_mut()) {
            v[idx] = row.get(c).and_then(|x| x.parse().ok()).ok_or_else(|| bad("downlink_bytes"))?;
        }
    }
    Ok(by_ap.into_values().collect())
}

fn default_peak_hour() -> f64 {
    14.0
}

fn default_users_base() -> f64 {
    10.0
}

/// One family of synthetic APs.
///
/// Window load is `base * (1 + amplitude * cos(2π (hour - peak_hour) / 24))`,
/// scaled by `1 - weekend_contrast` on Saturday and Sunday, plus an AR(1)
/// noise process with innovation std `noise_scale * base` and lag coefficient
/// `noise_ar`, clipped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub count: i64,
    /// Mean bytes per window.
    pub base_level: f64,
    pub diurnal_amplitude: f64,
    pub weekend_contrast: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub noise_ar: f64,
    #[serde(default = "default_peak_hour")]
    pub peak_hour: f64,
    /// Mean active users per window; follows the same profile as the load.
    #[serde(default = "default_users_base")]
    pub users_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub archetypes: Vec<Archetype>,
    pub days: u64,
    pub step_w: u64,
    #[serde(default = "default_origin")]
    pub origin: i64,
}

fn default_origin() -> i64 {
    DEFAULT_SYNTHETIC_ORIGIN
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.archetypes.is_empty() {
            problems.push("at least one archetype is required".to_owned());
        }
        if self.days == 0 {
            problems.push("days must be positive".to_owned());
        }
        if self.step_w == 0 {
            problems.push("step_w must be positive".to_owned());
        }
        for a in &self.archetypes {
            if a.count <= 0 {
                problems.push(format!("archetype `{}`: count must be positive", a.name));
            }
            if !(a.base_level >= 0.0) || !(a.noise_scale >= 0.0) || !(a.users_base >= 0.0) {
                problems.push(format!("archetype `{}`: levels and noise must be non-negative", a.name));
            }
            if !(0.0..=1.0).contains(&a.diurnal_amplitude) || !(0.0..=1.0).contains(&a.weekend_contrast) {
                problems.push(format!(
                    "archetype `{}`: amplitude and weekend contrast must lie in [0, 1]",
                    a.name
                ));
            }
            if !(a.noise_ar > -1.0 && a.noise_ar < 1.0) {
                problems.push(format!("archetype `{}`: noise_ar must lie in (-1, 1)", a.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub series: Vec<LoadSeries>,
    /// Generating archetype index per series, same order as `series`.
    pub labels: Vec<usize>,
    pub archetype_names: Vec<String>,
}

/// Hour of day in `[0, 24)` and whether the day is Saturday/Sunday, for a UTC
/// timestamp shifted by `tz_offset_hours`.
pub fn calendar_position(t: i64, tz_offset_hours: i32) -> (f64, bool) {
    let local = t + i64::from(tz_offset_hours) * 3600;
    let day = local.div_euclid(SECONDS_PER_DAY);
    let secs = local.rem_euclid(SECONDS_PER_DAY);
    // 1970-01-01 was a Thursday; weekday 0 = Monday.
    let weekday = (day + 3).rem_euclid(7);
    (secs as f64 / 3600.0, weekday >= 5)
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let n = (config.days * SECONDS_PER_DAY as u64).div_ceil(config.step_w) as usize;
    let mut series = Vec::new();
    let mut labels = Vec::new();
    for (label, arch) in config.archetypes.iter().enumerate() {
        for j in 0..arch.count {
            let ap_seed = seed::derive(seed, &["synthetic", &arch.name, &j.to_string()]);
            let mut rng = seed::rng(ap_seed);
            let noise = Normal::new(0.0, 1.0).expect("unit normal");
            let mut ar_state = 0.0;
            let mut load = Vec::with_capacity(n);
            let mut users = Vec::with_capacity(n);
            for i in 0..n {
                let t = config.origin + i as i64 * config.step_w as i64;
                let (hour, weekend) = calendar_position(t, 0);
                let phase = 2.0 * std::f64::consts::PI * (hour - arch.peak_hour) / 24.0;
                let mut profile = 1.0 + arch.diurnal_amplitude * phase.cos();
                if weekend {
                    profile *= 1.0 - arch.weekend_contrast;
                }
                let innovation: f64 = noise.sample(&mut rng);
                ar_state = arch.noise_ar * ar_state + arch.noise_scale * innovation;
                let value = arch.base_level * (profile + ar_state);
                load.push(value.max(0.0));
                let user_jitter = if arch.noise_scale > 0.0 {
                    rng.random_range(-0.5..0.5) * arch.noise_scale
                } else {
                    0.0
                };
                let u = arch.users_base * (profile + ar_state * 0.5 + user_jitter);
                users.push(u.max(0.0).round() as u32);
            }
            series.push(LoadSeries {
                ap_id: format!("{}-{:03}", arch.name, j),
                origin: config.origin,
                step_w: config.step_w,
                load,
                active_users: users,
                uplink: None,
                downlink: None,
            });
            labels.push(label);
        }
    }
    Ok(SyntheticDataset {
        series,
        labels,
        archetype_names: config.archetypes.iter().map(|a| a.name.clone()).collect(),
    })
}
