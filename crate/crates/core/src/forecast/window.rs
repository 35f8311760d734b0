use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LoadSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// 1 = load only, 2 = load and active users.
    pub input_channels: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 36,
            horizon: 1,
            stride: 1,
            train_fraction: 0.7,
            val_fraction: 0.1,
            input_channels: 1,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.lookback == 0 || self.horizon == 0 || self.stride == 0 {
            problems.push("lookback, horizon and stride must be positive".to_owned());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            problems.push(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if !(self.val_fraction >= 0.0 && self.train_fraction + self.val_fraction < 1.0) {
            problems.push(format!("val_fraction {} leaves no test split", self.val_fraction));
        }
        if !(1..=2).contains(&self.input_channels) {
            problems.push(format!("input_channels must be 1 or 2, got {}", self.input_channels));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Min-max scaling fitted on a series' training span. A flat span maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            Self { min: 0.0, max: 0.0 }
        } else {
            Self { min, max }
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let r = self.range();
        if r > 0.0 { (x - self.min) / r } else { 0.0 }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        let r = self.range();
        if r > 0.0 { z * r + self.min } else { self.min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub ap_id: String,
    pub load: Normalizer,
    pub users: Normalizer,
}

/// Supervised windows: inputs `m x P x channels` (time-major) and targets `m x h`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Index into `series` for every window.
    pub series_index: Vec<usize>,
    /// Position of the first input step in the source series.
    pub starts: Vec<usize>,
    pub splits: Vec<Split>,
    pub series: Vec<SeriesMeta>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.lookback * self.channels;
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn normalizer(&self, i: usize) -> &Normalizer {
        &self.series[self.series_index[i]].load
    }

    /// Appends another dataset with the same shape.
    pub fn append(&mut self, other: WindowedDataset) -> Result<()> {
        if self.series.is_empty() && self.is_empty() {
            *self = other;
            return Ok(());
        }
        if (self.lookback, self.horizon, self.channels) != (other.lookback, other.horizon, other.channels) {
            return Err(Error::InvalidInput("cannot pool windows of different shapes".into()));
        }
        let offset = self.series.len();
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        self.series_index.extend(other.series_index.into_iter().map(|i| i + offset));
        self.starts.extend(other.starts);
        self.splits.extend(other.splits);
        self.series.extend(other.series);
        Ok(())
    }

    /// Pools the windows of several series, skipping (with a warning) series too short to window.
    pub fn pooled<'a>(series: impl IntoIterator<Item = &'a LoadSeries>, config: &WindowConfig) -> Result<Self> {
        config.validate()?;
        let mut out = WindowedDataset {
            lookback: config.lookback,
            horizon: config.horizon,
            channels: config.input_channels,
            ..Default::default()
        };
        for s in series {
            match window_series(s, config) {
                Ok(ds) => out.append(ds)?,
                Err(Error::InvalidInput(msg)) => warn!("skipping series {}: {msg}", s.ap_id),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Slides a `(P, h)` window over one series with the given stride and splits
/// the windows chronologically into train/val/test.
pub fn window_series(series: &LoadSeries, config: &WindowConfig) -> Result<WindowedDataset> {
    config.validate()?;
    let (p, h, stride) = (config.lookback, config.horizon, config.stride);
    let n = series.len();
    if n < p + h {
        return Err(Error::InvalidInput(format!("series length {n} shorter than lookback + horizon = {}", p + h)));
    }
    let m = (n - p - h) / stride + 1;
    let n_train = ((m as f64 * config.train_fraction).floor() as usize).max(1);
    let n_val = ((m as f64 * config.val_fraction).floor() as usize).min(m - n_train);

    // Statistics over every value touched by a training window.
    let train_end = (n_train - 1) * stride + p + h;
    let users: Vec<f64> = series.active_users.iter().map(|&u| f64::from(u)).collect();
    let load_norm = Normalizer::fit(&series.load[..train_end]);
    let users_norm = Normalizer::fit(&users[..train_end]);

    let mut inputs = Vec::with_capacity(m * p * config.input_channels);
    let mut targets = Vec::with_capacity(m * h);
    let mut starts = Vec::with_capacity(m);
    let mut splits = Vec::with_capacity(m);
    for w in 0..m {
        let s = w * stride;
        for t in s..s + p {
            inputs.push(load_norm.normalize(series.load[t]));
            if config.input_channels == 2 {
                inputs.push(users_norm.normalize(users[t]));
            }
        }
        targets.extend(series.load[s + p..s + p + h].iter().map(|&v| load_norm.normalize(v)));
        starts.push(s);
        splits.push(if w < n_train {
            Split::Train
        } else if w < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(WindowedDataset {
        lookback: p,
        horizon: h,
        channels: config.input_channels,
        inputs,
        targets,
        series_index: vec![0; m],
        starts,
        splits,
        series: vec![SeriesMeta {
            ap_id: series.ap_id.clone(),
            load: load_norm,
            users: users_norm,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(load: Vec<f64>) -> LoadSeries {
        let n = load.len();
        LoadSeries {
            ap_id: "s".into(),
            origin: 0,
            step_w: 600,
            load,
            active_users: vec![1; n],
            uplink: None,
            downlink: None,
        }
    }

    fn cfg(p: usize, h: usize, stride: usize) -> WindowConfig {
        WindowConfig { lookback: p, horizon: h, stride, ..Default::default() }
    }

    #[test]
    fn window_count() {
        let s = series((0..10).map(f64::from).collect());
        assert_eq!(window_series(&s, &cfg(4, 2, 1)).unwrap().len(), 5);
        assert_eq!(window_series(&s, &cfg(4, 2, 10)).unwrap().len(), 1);
        assert!(window_series(&s, &cfg(8, 3, 1)).is_err());
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let ds = window_series(&series(vec![5.0; 20]), &cfg(4, 1, 1)).unwrap();
        assert!(ds.inputs.iter().chain(&ds.targets).all(|&v| v == 0.0));
        assert_eq!(ds.series[0].load.denormalize(0.0), 5.0);
    }

    #[test]
    fn chronological_split_and_train_only_stats() {
        let load: Vec<f64> = (0..100).map(f64::from).collect();
        let ds = window_series(&series(load), &cfg(5, 1, 1)).unwrap();
        let m = ds.len();
        assert_eq!(m, 95);
        let train = ds.indices(Split::Train);
        let test = ds.indices(Split::Test);
        assert_eq!(train.len(), 66);
        assert_eq!(ds.indices(Split::Val).len(), 9);
        let last_train = train.iter().map(|&i| ds.starts[i]).max().unwrap();
        assert!(test.iter().all(|&i| ds.starts[i] > last_train));
        // Max over the training span only (last train window ends at index 70).
        assert_eq!(ds.series[0].load.max, 70.0);
        assert!(ds.target(m - 1)[0] > 1.0);
    }

    #[test]
    fn two_channel_inputs_interleave() {
        let mut s = series(vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
        s.active_users = vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
        let c = WindowConfig { input_channels: 2, ..cfg(2, 1, 1) };
        let ds = window_series(&s, &c).unwrap();
        assert_eq!(ds.input(0).len(), 4);
        let (l, u) = (ds.series[0].load, ds.series[0].users);
        assert_eq!(ds.input(1), &[l.normalize(10.0), u.normalize(1.0), l.normalize(20.0), u.normalize(2.0)]);
    }

    #[test]
    fn pooling_duplicates_equals_doubling() {
        let s = series((0..30).map(|i| (i * 7 % 11) as f64).collect());
        let pooled = WindowedDataset::pooled([&s, &s], &cfg(4, 2, 1)).unwrap();
        let single = window_series(&s, &cfg(4, 2, 1)).unwrap();
        assert_eq!(pooled.len(), 2 * single.len());
        assert_eq!(&pooled.inputs[..single.inputs.len()], &single.inputs[..]);
        assert_eq!(&pooled.inputs[single.inputs.len()..], &single.inputs[..]);
        assert_eq!(pooled.series_index[single.len()], 1);
    }

    #[test]
    fn pooled_skips_short_series() {
        let long = series((0..30).map(f64::from).collect());
        let short = series(vec![1.0; 3]);
        let ds = WindowedDataset::pooled([&short, &long], &cfg(4, 1, 1)).unwrap();
        assert_eq!(ds.series.len(), 1);
    }
}
