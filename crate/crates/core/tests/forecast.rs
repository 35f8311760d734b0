use proptest::prelude::*;
use wlancast::forecast::{
    init_model, spec_storage, window_series, ModelSpec, Split, Tier, WindowConfig, BYTES_PER_PARAM,
};
use wlancast::ingest::{LoadSeries, DEFAULT_SYNTHETIC_ORIGIN};

fn series(n: usize) -> LoadSeries {
    LoadSeries {
        ap_id: "ap".into(),
        origin: DEFAULT_SYNTHETIC_ORIGIN,
        step_w: 600,
        load: (0..n).map(|i| ((i * 37) % 101) as f64 * 1e4).collect(),
        active_users: (0..n).map(|i| (i % 13) as u32).collect(),
        uplink: None,
        downlink: None,
    }
}

/// Tensor shapes of a stacked LSTM with a dense head, listed one by one.
fn tensor_shapes(spec: &ModelSpec) -> Vec<(usize, usize)> {
    let h = spec.hidden_size;
    let mut shapes = Vec::new();
    for layer in 0..spec.lstm_layers {
        let input = if layer == 0 { spec.input_channels } else { h };
        for _gate in ["input", "forget", "cell", "output"] {
            shapes.push((h, input));
            shapes.push((h, h));
            shapes.push((h, 1));
        }
    }
    shapes.push((spec.horizon, h));
    shapes.push((spec.horizon, 1));
    shapes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_leakage_between_splits(
        n in 40usize..400,
        lookback in 1usize..24,
        horizon in 1usize..7,
        stride in 1usize..8,
    ) {
        prop_assume!(n >= lookback + horizon + 10);
        let cfg = WindowConfig { lookback, horizon, stride, ..Default::default() };
        let ds = window_series(&series(n), &cfg).unwrap();
        let train = ds.indices(Split::Train);
        let test = ds.indices(Split::Test);
        let last_train = train.iter().map(|&i| ds.starts[i]).max().unwrap();
        for &i in &test {
            prop_assert!(ds.starts[i] > last_train);
        }
        // Splits appear in chronological order.
        let rank = |s: Split| match s { Split::Train => 0, Split::Val => 1, Split::Test => 2 };
        prop_assert!(ds.splits.windows(2).all(|w| rank(w[0]) <= rank(w[1])));
        // The normalizer only sees values touched by training windows.
        let end = last_train + lookback + horizon;
        let s = series(n);
        let seen = &s.load[..end];
        let lo = seen.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = seen.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!((ds.series[0].load.min, ds.series[0].load.max), (lo, hi));
    }

    #[test]
    fn parameter_count_matches_tensor_enumeration(
        layers in 1usize..6,
        hidden in 1usize..64,
        lookback in 1usize..48,
        horizon in 1usize..7,
        channels in 1usize..3,
    ) {
        let spec = ModelSpec { tier: Tier::Lk, lstm_layers: layers, hidden_size: hidden, lookback, horizon, input_channels: channels };
        let want: usize = tensor_shapes(&spec).iter().map(|(r, c)| r * c).sum();
        prop_assert_eq!(spec.param_count(), want);
        prop_assert_eq!(spec_storage(&spec), want as u64 * BYTES_PER_PARAM);
    }

    #[test]
    fn forward_is_deterministic_with_horizon_outputs(
        horizon in 1usize..7,
        lookback in 1usize..10,
        seed in any::<u64>(),
        x in prop::collection::vec(0.0..1.0f64, 20),
    ) {
        let spec = ModelSpec { tier: Tier::Lk, lstm_layers: 2, hidden_size: 5, lookback, horizon, input_channels: 2 };
        let model = init_model(&spec, seed).unwrap();
        prop_assert_eq!(model.parameters.len(), spec.param_count());
        let input = &x[..lookback * 2];
        let a = model.forward(input).unwrap();
        prop_assert_eq!(a.len(), horizon);
        prop_assert!(a.iter().all(|v| v.is_finite()));
        prop_assert_eq!(a, model.forward(input).unwrap());
        prop_assert!(model.forward(&x[..lookback * 2 - 1]).is_err());
    }
}

#[test]
fn reference_global_model_size() {
    let spec = ModelSpec::for_tier(Tier::Gm, 36, 1, 1);
    assert_eq!(spec.param_count(), 50_851);
    assert_eq!(spec_storage(&spec), 203_404);
    let init = init_model(&spec, 0).unwrap();
    assert_eq!(init.parameters.len(), 50_851);
}
