//! Forecast error metrics and the per-cluster performance table.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{predict_split, spec_storage, window_for, ForecastModel, Normalizer, Prediction, Split, Tier, WindowConfig, WindowedDataset};
use crate::ingest::LoadSeries;
use crate::stats;

pub const BYTES_PER_MB: f64 = 1_048_576.0;

/// Mean absolute deviation between a target window and its forecast.
pub fn mae(target: &[f64], prediction: &[f64]) -> Result<f64> {
    if target.len() != prediction.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), actual: prediction.len() });
    }
    if target.is_empty() {
        return Err(Error::Empty("forecast window"));
    }
    if target.iter().chain(prediction).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in error computation".into()));
    }
    let abs: Vec<f64> = target.iter().zip(prediction).map(|(t, p)| (t - p).abs()).collect();
    Ok(stats::mean(&abs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateError {
    /// Mean over every window of every cluster.
    pub overall: f64,
    /// Mean per cluster; `None` for clusters without windows.
    pub per_cluster: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Pools per-window errors indexed by cluster.
pub fn aggregate_error(per_cluster: &[Vec<f64>]) -> Result<AggregateError> {
    let all: Vec<f64> = per_cluster.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::Empty("window errors"));
    }
    Ok(AggregateError {
        overall: stats::mean(&all),
        per_cluster: per_cluster.iter().map(|e| (!e.is_empty()).then(|| stats::mean(e))).collect(),
        counts: per_cluster.iter().map(Vec::len).collect(),
    })
}

fn p99_of_bytes(abs_bytes: &[f64]) -> Result<f64> {
    let q = stats::quantile(abs_bytes, 0.99).ok_or(Error::Empty("error sample"))?;
    Ok(q / BYTES_PER_MB)
}

/// 99th percentile (linear interpolation) of the denormalized absolute error, in MB.
/// Horizon steps are pooled.
pub fn p99_abs_error(targets: &[f64], predictions: &[f64], denormalizer: &Normalizer) -> Result<f64> {
    if targets.len() != predictions.len() {
        return Err(Error::DimensionMismatch { expected: targets.len(), actual: predictions.len() });
    }
    let abs: Vec<f64> = targets
        .iter()
        .zip(predictions)
        .map(|(&t, &p)| (denormalizer.denormalize(t) - denormalizer.denormalize(p)).abs())
        .collect();
    p99_of_bytes(&abs)
}

/// Same as [`p99_abs_error`] over predictions that carry their own normalizers.
pub fn pooled_p99(predictions: &[Prediction]) -> Result<f64> {
    let abs: Vec<f64> = predictions
        .iter()
        .flat_map(|p| {
            p.target
                .iter()
                .zip(&p.predicted)
                .map(|(&t, &y)| (p.normalizer.denormalize(t) - p.normalizer.denormalize(y)).abs())
        })
        .collect();
    p99_of_bytes(&abs)
}

/// Relative reduction from `base` to `new`.
pub fn improvement(base_mae: f64, new_mae: f64) -> Result<f64> {
    if !(base_mae > 0.0) {
        return Err(Error::InvalidInput(format!("base MAE must be positive, got {base_mae}")));
    }
    Ok((base_mae - new_mae) / base_mae)
}

/// Nominal storage per tier used for planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalSizes {
    pub gm: u64,
    pub lk: u64,
    pub lkv2: u64,
}

impl Default for NominalSizes {
    fn default() -> Self {
        Self { gm: 1 << 20, lk: 1 << 20, lkv2: 7 << 19 }
    }
}

impl NominalSizes {
    pub fn of(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Gm => self.gm,
            Tier::Lk => self.lk,
            Tier::Lkv2 => self.lkv2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gm == 0 || self.lk == 0 || self.lkv2 == 0 {
            return Err(Error::Config("nominal model sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub cluster: usize,
    pub tier: Tier,
    pub horizon_minutes: u32,
    /// Mean over test windows (normalized units).
    pub mae: f64,
    /// Mean over series of each series' mean window error.
    pub mae_series_mean: f64,
    pub p99_abs_error_mb: f64,
    /// Nominal storage used by the planner.
    pub storage_bytes: u64,
    /// Parameter count times four bytes; 0 when no model was measured.
    pub computed_bytes: u64,
    pub n_series: usize,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub rows: Vec<PerformanceRow>,
    pub provenance: BTreeMap<String, String>,
}

impl PerformanceTable {
    pub fn get(&self, cluster: usize, tier: Tier, horizon_minutes: u32) -> Option<&PerformanceRow> {
        self.rows
            .iter()
            .find(|r| r.cluster == cluster && r.tier == tier && r.horizon_minutes == horizon_minutes)
    }

    /// Adds a row; a second row for the same (cluster, tier, horizon) is an error.
    pub fn push(&mut self, row: PerformanceRow) -> Result<()> {
        if self.get(row.cluster, row.tier, row.horizon_minutes).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate performance row for cluster {} {} at {} min",
                row.cluster, row.tier, row.horizon_minutes
            )));
        }
        if !(row.mae >= 0.0 && row.p99_abs_error_mb >= 0.0) {
            return Err(Error::InvalidInput(format!("negative or NaN error in row for cluster {}", row.cluster)));
        }
        self.rows.push(row);
        self.rows.sort_by_key(|r| (r.horizon_minutes, r.cluster, r.tier));
        Ok(())
    }

    pub fn merge(&mut self, other: PerformanceTable) -> Result<()> {
        for row in other.rows {
            self.push(row)?;
        }
        self.provenance.extend(other.provenance);
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        self.rows.iter().map(|r| r.cluster + 1).max().unwrap_or(0)
    }

    pub fn horizons(&self) -> Vec<u32> {
        let mut h: Vec<u32> = self.rows.iter().map(|r| r.horizon_minutes).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("performance table", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let parsed: PerformanceTable = serde_json::from_str(raw)?;
        let mut table = PerformanceTable { rows: Vec::new(), provenance: parsed.provenance };
        for row in parsed.rows {
            table.push(row)?;
        }
        Ok(table)
    }
}

/// A trained model and the clusters it is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct EvalModel<'a> {
    pub tier: Tier,
    /// `None` for the shared global model (evaluated on every cluster).
    pub cluster: Option<usize>,
    pub model: &'a ForecastModel,
}

/// Horizon in minutes for `h` steps of `step_w` seconds.
pub fn horizon_minutes(horizon: usize, step_w: u64) -> u32 {
    (horizon as u64 * step_w / 60) as u32
}

fn evaluate_cluster(
    model: &ForecastModel,
    members: &[&LoadSeries],
    window: &WindowConfig,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Prediction>)> {
    let data = WindowedDataset::pooled(members.iter().copied(), &window_for(&model.spec, window))?;
    let preds = predict_split(model, &data, Split::Test)?;
    let window_errors = preds.iter().map(|p| mae(&p.target, &p.predicted)).collect::<Result<Vec<_>>>()?;
    let mut by_series: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (p, e) in preds.iter().zip(&window_errors) {
        by_series.entry(p.ap_id.as_str()).or_default().push(*e);
    }
    let series_means: Vec<f64> = by_series.values().map(|v| stats::mean(v)).collect();
    Ok((window_errors, series_means, preds))
}

/// Runs every model on the test windows of the clusters it serves and records one
/// row per (cluster, tier, horizon). Every cluster must be covered by a global model
/// at each horizon present.
pub fn build_performance_table(
    models: &[EvalModel<'_>],
    series: &[LoadSeries],
    assignments: &[usize],
    k: usize,
    window: &WindowConfig,
    nominal: &NominalSizes,
) -> Result<PerformanceTable> {
    if series.len() != assignments.len() {
        return Err(Error::DimensionMismatch { expected: series.len(), actual: assignments.len() });
    }
    let step_w = series.first().map(|s| s.step_w).ok_or(Error::Empty("series"))?;
    let mut horizons: Vec<usize> = models.iter().map(|m| m.model.spec.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    for &h in &horizons {
        if !models.iter().any(|m| m.tier == Tier::Gm && m.cluster.is_none() && m.model.spec.horizon == h) {
            return Err(Error::MissingRow { cluster: 0, tier: format!("GM at {} min", horizon_minutes(h, step_w)) });
        }
    }
    let members: Vec<Vec<&LoadSeries>> = (0..k)
        .map(|c| series.iter().zip(assignments).filter(|(_, &a)| a == c).map(|(s, _)| s).collect())
        .collect();

    let mut tasks: Vec<(usize, EvalModel<'_>)> = Vec::new();
    for m in models {
        match m.cluster {
            None => tasks.extend((0..k).map(|c| (c, *m))),
            Some(c) if c < k => tasks.push((c, *m)),
            Some(c) => return Err(Error::InvalidInput(format!("model for cluster {c} but only {k} clusters"))),
        }
    }
    let rows: Vec<Option<PerformanceRow>> = tasks
        .par_iter()
        .map(|(c, m)| -> Result<Option<PerformanceRow>> {
            if members[*c].is_empty() {
                return Ok(None);
            }
            let (errors, series_means, preds) = evaluate_cluster(m.model, &members[*c], window)?;
            if errors.is_empty() {
                return Ok(None);
            }
            Ok(Some(PerformanceRow {
                cluster: *c,
                tier: m.tier,
                horizon_minutes: horizon_minutes(m.model.spec.horizon, step_w),
                mae: stats::mean(&errors),
                mae_series_mean: stats::mean(&series_means),
                p99_abs_error_mb: pooled_p99(&preds)?,
                storage_bytes: nominal.of(m.tier),
                computed_bytes: spec_storage(&m.model.spec),
                n_series: series_means.len(),
                n_windows: errors.len(),
            }))
        })
        .collect::<Result<_>>()?;
    let mut table = PerformanceTable::default();
    for row in rows.into_iter().flatten() {
        table.push(row)?;
    }
    table.provenance.insert("lookback".into(), window.lookback.to_string());
    table.provenance.insert("stride".into(), window.stride.to_string());
    table.provenance.insert("step_w".into(), step_w.to_string());
    for m in models {
        let key = match m.cluster {
            None => format!("seed.{}.h{}", m.tier, m.model.spec.horizon),
            Some(c) => format!("seed.{}.c{}.h{}", m.tier, c, m.model.spec.horizon),
        };
        table.provenance.insert(key, m.model.seed.to_string());
    }
    Ok(table)
}

/// Published campus results: per-cluster MAE (normalized) and 99th-percentile
/// absolute error (MB) for five clusters.
pub mod reference {
    use super::*;

    pub const GM_MAE_10MIN: [f64; 5] = [0.009, 0.0028, 0.00085, 0.00327, 0.00064];
    pub const GM_MAE_60MIN: [f64; 5] = [0.018, 0.010, 0.0039, 0.0073, 0.00043];
    pub const LK_MAE_10MIN: [f64; 5] = [0.0050, 0.0021, 0.0008, 0.0013, 0.0003];
    pub const LK_MAE_60MIN: [f64; 5] = [0.014, 0.006, 0.004, 0.0044, 0.00044];
    pub const P99_MB_10MIN: [f64; 5] = [0.05, 0.036, 0.005, 0.018, 0.01];
    pub const P99_MB_60MIN: [f64; 5] = [0.22, 0.16, 0.028, 0.1, 0.02];

    /// Cost summary as published: (label, models, storage MB, average accuracy).
    pub const COST_SUMMARY: [(&str, usize, f64, f64); 3] = [
        ("Global Model", 1, 1.0, 0.008),
        ("All Cluster-Specific", 5, 17.5, 0.004),
        ("Scalable", 3, 5.5, 0.0044),
    ];

    /// Published prose claim for the memory saving of the scalable deployment.
    pub const CLAIMED_MEMORY_SAVING: f64 = 0.40;

    /// GM and Lk rows for the given horizon (10 or 60 minutes).
    pub fn table(horizon_minutes: u32, nominal: &NominalSizes) -> Result<PerformanceTable> {
        let (gm, lk) = match horizon_minutes {
            10 => (GM_MAE_10MIN, LK_MAE_10MIN),
            60 => (GM_MAE_60MIN, LK_MAE_60MIN),
            other => return Err(Error::InvalidInput(format!("no reference results at {other} min"))),
        };
        // Percentiles are only published for the global model.
        let p99 = if horizon_minutes == 10 { P99_MB_10MIN } else { P99_MB_60MIN };
        let mut t = PerformanceTable::default();
        for c in 0..5 {
            for (tier, mae, p) in [(Tier::Gm, gm[c], p99[c]), (Tier::Lk, lk[c], 0.0)] {
                t.push(PerformanceRow {
                    cluster: c,
                    tier,
                    horizon_minutes,
                    mae,
                    mae_series_mean: mae,
                    p99_abs_error_mb: p,
                    storage_bytes: nominal.of(tier),
                    computed_bytes: 0,
                    n_series: 0,
                    n_windows: 0,
                })?;
            }
        }
        t.provenance.insert("source".into(), "reference".into());
        Ok(t)
    }
}
