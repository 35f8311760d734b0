use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstm::{self, Layout, Workspace};
use super::window::{Split, WindowConfig, WindowedDataset};
use super::{init_model, ForecastModel, ModelSpec, Tier, TrainedOn};
use crate::error::{Error, Result};
use crate::ingest::LoadSeries;
use crate::seed;

/// Samples per gradient chunk. Chunk boundaries are fixed so the summed
/// gradient does not depend on how many threads run.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 20,
            patience: 3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be finite and non-negative".to_owned());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            problems.push("batch_size and max_epochs must be positive".to_owned());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            problems.push("moment decay rates must lie in [0, 1) and epsilon must be positive".to_owned());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the training windows (normalized units).
    pub train_loss: f64,
    /// Mean absolute error over the validation windows (training windows if there are none).
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Epoch 0 is the untrained model.
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mae\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_mae));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Sum over `samples` of the squared error and its gradient (unscaled).
fn chunk_gradient(params: &[f64], layout: &Layout, spec: &ModelSpec, data: &WindowedDataset, samples: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; layout.total];
    let mut ws = Workspace::new(spec);
    let mut out = vec![0.0; spec.horizon];
    let mut d_out = vec![0.0; spec.horizon];
    let mut sse = 0.0;
    for &i in samples {
        let input = data.input(i);
        lstm::forward(params, layout, input, &mut ws, &mut out);
        for ((d, y), t) in d_out.iter_mut().zip(&out).zip(data.target(i)) {
            let e = y - t;
            sse += e * e;
            *d = 2.0 * e;
        }
        lstm::backward(params, layout, input, &mut ws, &d_out, &mut grad);
    }
    (sse, grad)
}

/// Mean squared error over `samples` (averaged over samples and horizon steps)
/// and its gradient with respect to every parameter.
pub(crate) fn batch_gradient(params: &[f64], spec: &ModelSpec, data: &WindowedDataset, samples: &[usize]) -> (f64, Vec<f64>) {
    let layout = Layout::new(spec);
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| chunk_gradient(params, &layout, spec, data, chunk))
        .collect();
    let scale = 1.0 / (samples.len() * spec.horizon) as f64;
    let mut grad = vec![0.0; layout.total];
    let mut sse = 0.0;
    for (s, g) in parts {
        sse += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    (sse * scale, grad)
}

fn predict_many(params: &[f64], spec: &ModelSpec, data: &WindowedDataset, samples: &[usize]) -> Vec<Vec<f64>> {
    let layout = Layout::new(spec);
    samples
        .par_chunks(64)
        .flat_map_iter(|chunk| {
            let mut ws = Workspace::new(spec);
            chunk
                .iter()
                .map(|&i| {
                    let mut out = vec![0.0; spec.horizon];
                    lstm::forward(params, &layout, data.input(i), &mut ws, &mut out);
                    out
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn mean_abs_error(params: &[f64], spec: &ModelSpec, data: &WindowedDataset, samples: &[usize]) -> f64 {
    let preds = predict_many(params, spec, data, samples);
    let errs: Vec<f64> = samples
        .iter()
        .zip(&preds)
        .map(|(&i, p)| p.iter().zip(data.target(i)).map(|(a, b)| (a - b).abs()).sum::<f64>() / spec.horizon as f64)
        .collect();
    crate::stats::mean(&errs)
}

fn mean_sq_error(params: &[f64], spec: &ModelSpec, data: &WindowedDataset, samples: &[usize]) -> f64 {
    let preds = predict_many(params, spec, data, samples);
    let errs: Vec<f64> = samples
        .iter()
        .zip(&preds)
        .map(|(&i, p)| {
            p.iter().zip(data.target(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / spec.horizon as f64
        })
        .collect();
    crate::stats::mean(&errs)
}

fn check_shape(model: &ForecastModel, data: &WindowedDataset) -> Result<()> {
    let s = &model.spec;
    if (s.lookback, s.horizon, s.input_channels) != (data.lookback, data.horizon, data.channels) {
        return Err(Error::InvalidInput(format!(
            "dataset shape (P={}, h={}, c={}) does not match model (P={}, h={}, c={})",
            data.lookback, data.horizon, data.channels, s.lookback, s.horizon, s.input_channels
        )));
    }
    Ok(())
}

/// Mini-batch Adam on mean squared error with early stopping on validation MAE.
/// Returns the parameters of the best validation epoch (epoch 0 = untrained).
pub fn train(model: &ForecastModel, data: &WindowedDataset, config: &TrainConfig) -> Result<(ForecastModel, TrainReport)> {
    config.validate()?;
    check_shape(model, data)?;
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut val_idx = data.indices(Split::Val);
    if val_idx.is_empty() {
        val_idx = train_idx.clone();
    }
    let spec = model.spec;
    let mut params = model.parameters.clone();
    let mut adam = Adam::new(params.len());

    let initial = EpochRecord {
        epoch: 0,
        train_loss: mean_sq_error(&params, &spec, data, &train_idx),
        val_mae: mean_abs_error(&params, &spec, data, &val_idx),
    };
    let mut history = vec![initial];
    let mut best = (initial.val_mae, 0usize, params.clone());
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut order = train_idx.clone();

    for epoch in 1..=config.max_epochs {
        let mut rng = seed::rng(seed::derive(config.seed, &["epoch", &epoch.to_string()]));
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grad) = batch_gradient(&params, &spec, data, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            weighted_loss += loss * batch.len() as f64;
            adam.update(&mut params, &grad, config);
        }
        let val_mae = mean_abs_error(&params, &spec, data, &val_idx);
        if !val_mae.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0, loss: val_mae });
        }
        let record = EpochRecord {
            epoch,
            train_loss: weighted_loss / order.len() as f64,
            val_mae,
        };
        debug!("epoch {epoch}: train_loss {:.6} val_mae {:.6}", record.train_loss, val_mae);
        history.push(record);
        if val_mae < best.0 {
            best = (val_mae, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let trained = ForecastModel {
        parameters: best.2,
        ..model.clone()
    };
    Ok((
        trained,
        TrainReport {
            history,
            best_epoch: best.1,
            stopped_early,
        },
    ))
}

/// One evaluated window: normalized target and prediction plus its normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ap_id: String,
    pub start: usize,
    pub target: Vec<f64>,
    pub predicted: Vec<f64>,
    pub normalizer: super::Normalizer,
}

pub fn predict_split(model: &ForecastModel, data: &WindowedDataset, split: Split) -> Result<Vec<Prediction>> {
    check_shape(model, data)?;
    let idx = data.indices(split);
    let preds = predict_many(&model.parameters, &model.spec, data, &idx);
    Ok(idx
        .iter()
        .zip(preds)
        .map(|(&i, predicted)| Prediction {
            ap_id: data.series[data.series_index[i]].ap_id.clone(),
            start: data.starts[i],
            target: data.target(i).to_vec(),
            predicted,
            normalizer: *data.normalizer(i),
        })
        .collect())
}

/// Global model: one network on the pooled windows of every series.
/// Window shape (lookback, horizon, channels) comes from `spec`.
pub fn train_global(
    series: &[LoadSeries],
    spec: &ModelSpec,
    window: &WindowConfig,
    config: &TrainConfig,
) -> Result<(ForecastModel, TrainReport)> {
    train_tier(series.iter(), spec, TrainedOn::All, window, config)
}

/// Cluster-specific model trained only on `members` (indices into `series`).
pub fn train_cluster(
    series: &[LoadSeries],
    members: &[usize],
    cluster: usize,
    spec: &ModelSpec,
    window: &WindowConfig,
    config: &TrainConfig,
) -> Result<(ForecastModel, TrainReport)> {
    if members.is_empty() {
        return Err(Error::InvalidInput(format!("cluster {cluster} has no members")));
    }
    if spec.tier == Tier::Gm {
        return Err(Error::InvalidInput("cluster models use the Lk or Lkv2 tier".into()));
    }
    let selected = members
        .iter()
        .map(|&i| series.get(i).ok_or_else(|| Error::InvalidInput(format!("member index {i} out of range"))))
        .collect::<Result<Vec<_>>>()?;
    train_tier(selected, spec, TrainedOn::Cluster(cluster), window, config)
}

/// Window settings matching the shape `spec` expects.
pub fn window_for(spec: &ModelSpec, window: &WindowConfig) -> WindowConfig {
    WindowConfig {
        lookback: spec.lookback,
        horizon: spec.horizon,
        input_channels: spec.input_channels,
        ..*window
    }
}

fn train_tier<'a>(
    series: impl IntoIterator<Item = &'a LoadSeries>,
    spec: &ModelSpec,
    trained_on: TrainedOn,
    window: &WindowConfig,
    config: &TrainConfig,
) -> Result<(ForecastModel, TrainReport)> {
    let data = WindowedDataset::pooled(series, &window_for(spec, window))?;
    let mut model = init_model(spec, config.seed)?;
    model.trained_on = trained_on;
    info!("training {} ({trained_on:?}) on {} windows, {} parameters", spec.tier, data.len(), model.param_count);
    train(&model, &data, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::window::window_series;

    fn sine(n: usize, phase: f64) -> LoadSeries {
        LoadSeries {
            ap_id: format!("sine{phase}"),
            origin: 0,
            step_w: 600,
            load: (0..n).map(|i| 100.0 * (1.0 + (i as f64 * 2.0 * std::f64::consts::PI / 12.0 + phase).sin())).collect(),
            active_users: vec![1; n],
            uplink: None,
            downlink: None,
        }
    }

    fn small_spec(window: &WindowConfig) -> ModelSpec {
        ModelSpec { tier: Tier::Lk, lstm_layers: 1, hidden_size: 8, lookback: window.lookback, horizon: window.horizon, input_channels: 1 }
    }

    #[test]
    fn learns_a_sinusoid() {
        let window = WindowConfig { lookback: 12, ..Default::default() };
        let data = window_series(&sine(400, 0.0), &window).unwrap();
        let model = init_model(&small_spec(&window), 1).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, batch_size: 16, max_epochs: 20, patience: 20, seed: 1, ..Default::default() };
        let (trained, report) = train(&model, &data, &cfg).unwrap();
        let before = report.history[0].val_mae;
        let after = report.history[report.best_epoch].val_mae;
        assert!(after <= 0.5 * before, "val MAE {before} -> {after}");
        assert_eq!(trained.trained_on, TrainedOn::All);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let window = WindowConfig { lookback: 6, ..Default::default() };
        let data = window_series(&sine(80, 0.3), &window).unwrap();
        let model = init_model(&small_spec(&window), 2).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, patience: 5, batch_size: 7, ..Default::default() };
        let (trained, report) = train(&model, &data, &cfg).unwrap();
        assert_eq!(trained.parameters, model.parameters);
        let first = report.history[0].train_loss;
        for r in &report.history {
            assert!((r.train_loss - first).abs() <= 1e-12 * first.max(1.0));
            assert_eq!(r.val_mae, report.history[0].val_mae);
        }
    }

    #[test]
    fn patience_zero_stops_after_first_non_improving_epoch() {
        let window = WindowConfig { lookback: 6, ..Default::default() };
        let data = window_series(&sine(80, 0.3), &window).unwrap();
        let model = init_model(&small_spec(&window), 2).unwrap();
        // A zero learning rate never improves, so the first epoch already fails to improve.
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 10, patience: 0, ..Default::default() };
        let (_, report) = train(&model, &data, &cfg).unwrap();
        assert_eq!(report.history.len(), 2);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let window = WindowConfig { lookback: 6, ..Default::default() };
        let data = window_series(&sine(120, 0.1), &window).unwrap();
        let model = init_model(&small_spec(&window), 5).unwrap();
        let cfg = TrainConfig { max_epochs: 2, batch_size: 10, seed: 9, ..Default::default() };
        assert_eq!(train(&model, &data, &cfg).unwrap(), train(&model, &data, &cfg).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let window = WindowConfig { lookback: 4, ..Default::default() };
        let data = window_series(&sine(60, 0.0), &window).unwrap();
        let mut model = init_model(&small_spec(&window), 5).unwrap();
        let head = model.layout().head_weights.start;
        model.parameters[head] = f64::INFINITY;
        let err = train(&model, &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn cluster_training_tags_and_rejects_empty() {
        let series = vec![sine(60, 0.0), sine(60, 1.0)];
        let window = WindowConfig { lookback: 4, ..Default::default() };
        let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
        let lk = ModelSpec::for_tier(Tier::Lk, 4, 1, 1);
        assert!(train_cluster(&series, &[], 0, &lk, &window, &cfg).is_err());
        assert!(train_cluster(&series, &[0], 0, &ModelSpec { tier: Tier::Gm, ..lk }, &window, &cfg).is_err());
        let (a, _) = train_cluster(&series, &[1], 3, &lk, &window, &cfg).unwrap();
        assert_eq!(a.trained_on, TrainedOn::Cluster(3));
        assert_eq!((a.spec.lstm_layers, a.spec.hidden_size), (3, 50));
        let (b, _) = train_cluster(&series, &[1], 3, &lk, &window, &cfg).unwrap();
        assert_eq!(a, b);
        let v2 = ModelSpec { lookback: 2, ..ModelSpec::for_tier(Tier::Lkv2, 4, 1, 1) };
        assert_eq!(init_model(&v2, 0).unwrap().spec.hidden_size, 200);
        let (g, _) = train_global(&series, &ModelSpec::for_tier(Tier::Gm, 4, 1, 1), &window, &cfg).unwrap();
        assert_eq!(g.trained_on, TrainedOn::All);
    }
}
