use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, Layout, Workspace};
use super::{init_model, ForecastModel, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;

const EPSILON: f64 = 1e-5;
/// Below this gradient magnitude deviations are compared absolutely.
const SMALL: f64 = 1e-6;
const SAMPLES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Worst relative deviation among parameters with a non-negligible gradient.
    pub max_relative: f64,
    /// Worst absolute deviation among parameters whose gradient is below 1e-6.
    pub max_absolute_small: f64,
    pub worst_index: usize,
    pub parameters: usize,
}

impl GradCheckReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_relative.max(self.max_absolute_small)
    }
}

fn loss(params: &[f64], layout: &Layout, spec: &ModelSpec, inputs: &[f64], targets: &[f64]) -> f64 {
    let mut ws = Workspace::new(spec);
    let mut out = vec![0.0; spec.horizon];
    let n = targets.len() / spec.horizon;
    let width = spec.lookback * spec.input_channels;
    let mut sse = 0.0;
    for s in 0..n {
        lstm::forward(params, layout, &inputs[s * width..(s + 1) * width], &mut ws, &mut out);
        for (y, t) in out.iter().zip(&targets[s * spec.horizon..(s + 1) * spec.horizon]) {
            sse += (y - t) * (y - t);
        }
    }
    sse / targets.len() as f64
}

/// Compares the BPTT gradient of the mean squared error over the given samples
/// against central finite differences for every parameter.
pub fn gradient_check_model(model: &ForecastModel, inputs: &[f64], targets: &[f64]) -> Result<GradCheckReport> {
    let spec = model.spec;
    let width = spec.lookback * spec.input_channels;
    if targets.is_empty() || targets.len() % spec.horizon != 0 {
        return Err(Error::InvalidInput("targets must hold a positive multiple of horizon values".into()));
    }
    let n = targets.len() / spec.horizon;
    if inputs.len() != n * width {
        return Err(Error::DimensionMismatch { expected: n * width, actual: inputs.len() });
    }
    let layout = Layout::new(&spec);
    let mut ws = Workspace::new(&spec);
    let mut out = vec![0.0; spec.horizon];
    let mut d_out = vec![0.0; spec.horizon];
    let mut analytic = vec![0.0; layout.total];
    let scale = 1.0 / targets.len() as f64;
    for s in 0..n {
        let x = &inputs[s * width..(s + 1) * width];
        lstm::forward(&model.parameters, &layout, x, &mut ws, &mut out);
        for ((d, y), t) in d_out.iter_mut().zip(&out).zip(&targets[s * spec.horizon..]) {
            *d = 2.0 * (y - t) * scale;
        }
        lstm::backward(&model.parameters, &layout, x, &mut ws, &d_out, &mut analytic);
    }

    let mut params = model.parameters.clone();
    let mut report = GradCheckReport { max_relative: 0.0, max_absolute_small: 0.0, worst_index: 0, parameters: layout.total };
    for k in 0..layout.total {
        let orig = params[k];
        params[k] = orig + EPSILON;
        let up = loss(&params, &layout, &spec, inputs, targets);
        params[k] = orig - EPSILON;
        let down = loss(&params, &layout, &spec, inputs, targets);
        params[k] = orig;
        let numeric = (up - down) / (2.0 * EPSILON);
        let a = analytic[k];
        let diff = (a - numeric).abs();
        let mag = a.abs().max(numeric.abs());
        if mag < SMALL {
            report.max_absolute_small = report.max_absolute_small.max(diff);
        } else if diff / mag > report.max_relative {
            report.max_relative = diff / mag;
            report.worst_index = k;
        }
    }
    Ok(report)
}

/// Gradient check on a randomly initialised tiny model with random inputs and
/// targets; returns the worst deviation (relative, or absolute for ~zero gradients).
pub fn gradient_check(spec: &ModelSpec, seed: u64) -> Result<f64> {
    if spec.lstm_layers > 2 || spec.hidden_size > 4 || spec.lookback > 6 {
        return Err(Error::InvalidInput("gradient check expects at most 2 layers, hidden 4 and lookback 6".into()));
    }
    let mut model = init_model(spec, seed)?;
    let mut rng = seed::rng(seed::derive(seed, &["gradcheck"]));
    // Spread the parameters so every gate operates away from the origin.
    for p in &mut model.parameters {
        *p += rng.random_range(-0.5..0.5);
    }
    let inputs: Vec<f64> = (0..SAMPLES * spec.lookback * spec.input_channels).map(|_| rng.random_range(0.0..1.0)).collect();
    let targets: Vec<f64> = (0..SAMPLES * spec.horizon).map(|_| rng.random_range(0.0..1.0)).collect();
    Ok(gradient_check_model(&model, &inputs, &targets)?.max_deviation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::Tier;

    fn tiny(layers: usize, hidden: usize, lookback: usize, horizon: usize, channels: usize) -> ModelSpec {
        ModelSpec { tier: Tier::Lk, lstm_layers: layers, hidden_size: hidden, lookback, horizon, input_channels: channels }
    }

    #[test]
    fn single_layer_hidden_three() {
        let d = gradient_check(&tiny(1, 3, 4, 1, 1), 7).unwrap();
        assert!(d < 1e-4, "deviation {d}");
    }

    #[test]
    fn two_layers_multi_output_two_channels() {
        let d = gradient_check(&tiny(2, 4, 5, 3, 2), 8).unwrap();
        assert!(d < 1e-4, "deviation {d}");
    }

    #[test]
    fn zero_gradient_parameters_use_absolute_comparison() {
        // With a single step the recurrent weights only ever see h_0 = 0.
        let spec = tiny(1, 2, 1, 1, 1);
        let model = init_model(&spec, 3).unwrap();
        let report = gradient_check_model(&model, &[0.4, 0.9], &[0.2, 0.7]).unwrap();
        assert!(report.max_absolute_small < 1e-7, "{report:?}");
        assert!(report.max_relative < 1e-4, "{report:?}");
    }

    #[test]
    fn repeatable() {
        let spec = tiny(2, 3, 3, 2, 1);
        assert_eq!(gradient_check(&spec, 5).unwrap(), gradient_check(&spec, 5).unwrap());
    }

    #[test]
    fn oversized_spec_rejected() {
        assert!(gradient_check(&tiny(3, 2, 2, 1, 1), 0).is_err());
    }
}
