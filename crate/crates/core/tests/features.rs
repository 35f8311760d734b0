use proptest::prelude::*;
use wlancast::features::{
    day_type_totals, extract_all, extract_features, scale_features, tertiles_of, CalendarConfig, Scaler, Transform,
    FEATURE_COUNT,
};
use wlancast::ingest::{LoadSeries, DEFAULT_SYNTHETIC_ORIGIN};

fn series(load: Vec<f64>, users: Vec<u32>, step_w: u64) -> LoadSeries {
    LoadSeries {
        ap_id: "ap".into(),
        origin: DEFAULT_SYNTHETIC_ORIGIN,
        step_w,
        load,
        active_users: users,
        uplink: None,
        downlink: None,
    }
}

fn arb_series() -> impl Strategy<Value = LoadSeries> {
    (24usize..400, prop::sample::select(vec![600u64, 1800, 3600])).prop_flat_map(|(n, step)| {
        (
            prop::collection::vec(prop_oneof![Just(0.0), 0.0..5e6f64], n),
            prop::collection::vec(0u32..50, n),
        )
            .prop_map(move |(load, users)| series(load, users, step))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_arity_finite_and_bounded(s in arb_series(), tz in -12i32..=12) {
        let cal = CalendarConfig { tz_offset_hours: tz, ..Default::default() };
        let (features, _) = extract_all(std::slice::from_ref(&s), Transform::CubeRoot, &cal).unwrap();
        let f = &features[0];
        prop_assert_eq!(f.values.len(), FEATURE_COUNT);
        prop_assert!(f.values.iter().all(|v| v.is_finite()));
        for name in ["night_load_ratio", "zero_window_fraction", "low_byte_fraction", "peak_hour"] {
            let v = f.get(name).unwrap();
            prop_assert!((0.0..=1.0).contains(&v), "{} = {}", name, v);
        }
        for (name, v) in f.names().iter().zip(&f.values) {
            if name.ends_with("_std") || name.ends_with("_mean") {
                prop_assert!(*v >= 0.0, "{} = {}", name, v);
            }
        }
    }

    #[test]
    fn day_types_partition_the_total(s in arb_series(), tz in -12i32..=12) {
        let cal = CalendarConfig { tz_offset_hours: tz, ..Default::default() };
        let (weekday, weekend) = day_type_totals(&s, &cal);
        let total: f64 = s.load.iter().sum();
        prop_assert!((weekday + weekend - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn zscore_ignores_positive_column_scale(
        rows in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 4), 2..20),
        col in 0usize..4,
        factor in 1e-3..1e3f64,
    ) {
        let scaled = Scaler::fit(&rows).unwrap().transform(&rows).unwrap();
        let stretched: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| { let mut r = r.clone(); r[col] *= factor; r })
            .collect();
        let scaler = Scaler::fit(&stretched).unwrap();
        let again = scaler.transform(&stretched).unwrap();
        for (a, b) in scaled.iter().zip(&again) {
            prop_assert!((a[col] - b[col]).abs() <= 1e-9, "{} vs {}", a[col], b[col]);
        }
    }

    #[test]
    fn tertiles_are_ordered(s in arb_series()) {
        let t = tertiles_of(std::slice::from_ref(&s)).unwrap();
        prop_assert!(t.low <= t.high);
    }
}

#[test]
fn zscore_hand_example_and_degenerate_column() {
    let rows = vec![vec![1.0, 7.0], vec![3.0, 7.0]];
    let scaler = Scaler::fit(&rows).unwrap();
    assert_eq!(scaler.transform(&rows).unwrap(), vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);
    assert_eq!(scaler.degenerate, vec![false, true]);
    assert_eq!(scaler.inverse_row(&[1.0, 0.0])[0], 3.0);
    assert!(Scaler::fit(&rows[..1]).is_err());
}

#[test]
fn names_are_stable_across_calls() {
    let s = series((0..168).map(f64::from).collect(), vec![1; 168], 3600);
    let (a, t) = extract_all(std::slice::from_ref(&s), Transform::Log1p, &CalendarConfig::default()).unwrap();
    let b = extract_features(&wlancast::features::transform_load(&s, Transform::Log1p), &CalendarConfig::default(), &t).unwrap();
    assert_eq!(a[0], b);
    assert_eq!(a[0].names(), b.names());
    let (m, _) = scale_features(&[a[0].clone(), b.clone()]).unwrap();
    assert!(m.iter().flatten().all(|v| *v == 0.0));
}
