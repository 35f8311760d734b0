//! Stacked-LSTM forecasters trained with backpropagation through time.
//!
//! Parameters live in one flat `f64` vector. For each LSTM layer `l` with input
//! width `in_l` and hidden width `H`:
//!
//! * a `4H x (in_l + H)` row-major weight block; row groups are the input,
//!   forget, candidate and output gates (in that order), columns are the layer
//!   input followed by the previous hidden state;
//! * a `4H` bias block in the same gate order.
//!
//! The head follows: an `h x H` row-major weight block, then `h` biases.

mod gradcheck;
mod lstm;
mod train;
mod window;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use gradcheck::{gradient_check, gradient_check_model, GradCheckReport};
pub use lstm::{Layout, Workspace};
pub use train::{
    predict_split, train, train_cluster, train_global, window_for, EpochRecord, Prediction, TrainConfig, TrainReport,
};
pub use window::{window_series, Normalizer, Split, WindowConfig, WindowedDataset};

/// Bytes per stored parameter (single precision).
pub const BYTES_PER_PARAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "GM")]
    Gm,
    #[serde(rename = "Lk")]
    Lk,
    #[serde(rename = "Lkv2")]
    Lkv2,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Gm, Tier::Lk, Tier::Lkv2];

    /// (layers, hidden) of the reference architecture for this tier.
    pub fn architecture(self) -> (usize, usize) {
        match self {
            Tier::Gm | Tier::Lk => (3, 50),
            Tier::Lkv2 => (5, 200),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Gm => "GM",
            Tier::Lk => "Lk",
            Tier::Lkv2 => "Lkv2",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GM" | "gm" => Ok(Tier::Gm),
            "Lk" | "lk" => Ok(Tier::Lk),
            "Lkv2" | "lkv2" => Ok(Tier::Lkv2),
            other => Err(Error::Config(format!("unknown model tier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tier: Tier,
    pub lstm_layers: usize,
    pub hidden_size: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub input_channels: usize,
}

impl ModelSpec {
    /// Reference architecture for `tier`.
    pub fn for_tier(tier: Tier, lookback: usize, horizon: usize, input_channels: usize) -> Self {
        let (lstm_layers, hidden_size) = tier.architecture();
        Self {
            tier,
            lstm_layers,
            hidden_size,
            lookback,
            horizon,
            input_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lstm_layers", self.lstm_layers),
            ("hidden_size", self.hidden_size),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("input_channels", self.input_channels),
        ];
        let zero: Vec<&str> = fields.iter().filter(|(_, v)| *v == 0).map(|(n, _)| *n).collect();
        if zero.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("model spec fields must be positive: {}", zero.join(", "))))
        }
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 { self.input_channels } else { self.hidden_size }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_size;
        let lstm: usize = (0..self.lstm_layers)
            .map(|l| 4 * (h * (self.layer_input(l) + h) + h))
            .sum();
        lstm + h * self.horizon + self.horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainedOn {
    All,
    Cluster(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub spec: ModelSpec,
    pub trained_on: TrainedOn,
    pub seed: u64,
    pub param_count: usize,
    /// Flat parameter vector; see the module docs for the layout.
    pub parameters: Vec<f64>,
}

/// Fresh model: weights uniform in `(-s, s)` with `s = 1/sqrt(hidden)`,
/// forget-gate biases 1, other biases 0.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ForecastModel> {
    spec.validate()?;
    let layout = Layout::new(spec);
    let mut rng = seed::rng(seed::derive(seed, &["init"]));
    let s = 1.0 / (spec.hidden_size as f64).sqrt();
    let mut parameters = vec![0.0; layout.total];
    for layer in &layout.layers {
        for w in &mut parameters[layer.weights.clone()] {
            *w = rng.random_range(-s..s);
        }
        let h = spec.hidden_size;
        let bias = layer.bias.start;
        parameters[bias + h..bias + 2 * h].iter_mut().for_each(|b| *b = 1.0);
    }
    for w in &mut parameters[layout.head_weights.clone()] {
        *w = rng.random_range(-s..s);
    }
    Ok(ForecastModel {
        spec: *spec,
        trained_on: TrainedOn::All,
        seed,
        param_count: layout.total,
        parameters,
    })
}

impl ForecastModel {
    pub fn layout(&self) -> Layout {
        Layout::new(&self.spec)
    }

    /// Predicts `horizon` normalized values from `lookback * input_channels`
    /// inputs (time-major, channels interleaved).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let expected = self.spec.lookback * self.spec.input_channels;
        if input.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("forecast input contains non-finite values".into()));
        }
        let layout = self.layout();
        let mut ws = Workspace::new(&self.spec);
        let mut out = vec![0.0; self.spec.horizon];
        lstm::forward(&self.parameters, &layout, input, &mut ws, &mut out);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let model: ForecastModel = serde_json::from_str(raw)?;
        model.spec.validate()?;
        if model.parameters.len() != model.spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: model.spec.param_count(),
                actual: model.parameters.len(),
            });
        }
        Ok(model)
    }
}

/// Computed storage footprint: parameter count times 4 bytes.
pub fn model_storage(model: &ForecastModel) -> u64 {
    model.param_count as u64 * BYTES_PER_PARAM
}

pub fn spec_storage(spec: &ModelSpec) -> u64 {
    spec.param_count() as u64 * BYTES_PER_PARAM
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameter_counts() {
        let gm = ModelSpec::for_tier(Tier::Gm, 36, 1, 1);
        assert_eq!(gm.param_count(), 10_400 + 2 * 20_200 + 51);
        assert_eq!(gm.param_count(), 50_851);
        assert_eq!(spec_storage(&gm), 203_404);
        let gm6 = ModelSpec::for_tier(Tier::Gm, 36, 6, 1);
        assert_eq!(gm6.param_count() - gm.param_count() + 51, 306);
        let v2 = ModelSpec::for_tier(Tier::Lkv2, 36, 1, 1);
        assert_eq!((v2.lstm_layers, v2.hidden_size), (5, 200));
    }

    #[test]
    fn init_is_deterministic_and_sized() {
        let spec = ModelSpec::for_tier(Tier::Gm, 4, 1, 1);
        let a = init_model(&spec, 3).unwrap();
        let b = init_model(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_count, spec.param_count());
        assert_ne!(a.parameters, init_model(&spec, 4).unwrap().parameters);
    }

    #[test]
    fn storage_is_four_bytes_per_param() {
        let spec = ModelSpec::for_tier(Tier::Gm, 4, 1, 1);
        let mut m = init_model(&spec, 1).unwrap();
        m.param_count = 1000;
        assert_eq!(model_storage(&m), 4000);
    }

    #[test]
    fn degenerate_spec_rejected() {
        let spec = ModelSpec { hidden_size: 0, ..ModelSpec::for_tier(Tier::Gm, 4, 1, 1) };
        assert!(matches!(init_model(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn nan_input_rejected() {
        let m = init_model(&ModelSpec::for_tier(Tier::Gm, 3, 1, 1), 0).unwrap();
        assert!(m.forward(&[0.0, f64::NAN, 0.0]).is_err());
        assert!(m.forward(&[0.0, 0.0]).is_err());
        let a = m.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, m.forward(&[0.1, 0.2, 0.3]).unwrap());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = ModelSpec::for_tier(Tier::Gm, 5, 6, 1);
        let mut m = init_model(&spec, 0).unwrap();
        m.parameters.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(m.forward(&[0.3; 5]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn json_round_trip() {
        let m = init_model(&ModelSpec::for_tier(Tier::Lk, 3, 2, 2), 11).unwrap();
        assert_eq!(ForecastModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
