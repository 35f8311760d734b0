//! Acceptance suite. Each check prints one PASS/FAIL line; the process exits
//! non-zero if any check fails or exceeds its time budget.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use wlancast::cluster::{adjusted_rand_index, kmeans, KMeansParams};
use wlancast::deploy::{plan_deployment, plan_uniform, DeployPolicy};
use wlancast::eval::{build_performance_table, improvement, reference, EvalModel, NominalSizes};
use wlancast::features::{extract_features, feature_names, ByteTertiles, CalendarConfig, Period, FEATURE_COUNT};
use wlancast::forecast::{gradient_check, train_cluster, train_global, ModelSpec, Tier, TrainConfig, WindowConfig};
use wlancast::ingest::{
    derive_load_series, generate_synthetic, Archetype, AssociationRecord, ChannelMode, LoadSeries, Span,
    SyntheticConfig, DEFAULT_SYNTHETIC_ORIGIN,
};
use wlancast::pipeline::{run_all, run_stage, ClusterArtifact, PipelineConfig, RunOptions, Stage};
use wlancast::reduce::pca_fit;
use wlancast::seed;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn archetype(name: &str, count: i64, base: f64, amp: f64, weekend: f64, noise: f64, ar: f64, peak: f64) -> Archetype {
    Archetype {
        name: name.into(),
        count,
        base_level: base,
        diurnal_amplitude: amp,
        weekend_contrast: weekend,
        noise_scale: noise,
        noise_ar: ar,
        peak_hour: peak,
        users_base: 10.0,
    }
}

// 1 -------------------------------------------------------------------------

fn cost_table() -> Check {
    let policy = DeployPolicy::default();
    let table = reference::table(10, &policy.nominal_sizes).map_err(|e| e.to_string())?;
    let all = plan_uniform(&table, Tier::Lkv2, &policy, 10).map_err(|e| e.to_string())?;
    let gm = plan_uniform(&table, Tier::Gm, &policy, 10).map_err(|e| e.to_string())?;
    ensure(all.total_storage == 35 * (1 << 20) / 2 && all.models_deployed == 5, format!("all-Lkv2 {} B", all.total_storage))?;
    ensure(gm.total_storage == 1 << 20 && gm.models_deployed == 1, format!("GM-only {} B", gm.total_storage))?;
    Ok(format!("all-Lkv2 {} MB, GM-only {} MB", all.total_storage_mb(), gm.total_storage_mb()))
}

// 2 -------------------------------------------------------------------------

fn policy_reference() -> Check {
    let policy = DeployPolicy::default();
    let table = reference::table(10, &policy.nominal_sizes).map_err(|e| e.to_string())?;
    let plan = plan_deployment(&table, &policy, 10).map_err(|e| e.to_string())?;
    let want = [Tier::Lkv2, Tier::Lk, Tier::Gm, Tier::Lk, Tier::Gm];
    ensure(plan.tiers() == want, format!("tiers {:?}", plan.tiers()))?;
    // Independent storage sum: one shared GM, two Lk, one Lkv2.
    let expected = 1.0 + 2.0 * 1.0 + 3.5;
    ensure(plan.total_storage_mb() == expected, format!("storage {} MB", plan.total_storage_mb()))?;
    let listed = reference::COST_SUMMARY[2].2;
    Ok(format!(
        "C0..C4 = Lkv2,Lk,GM,Lk,GM; storage {} MB (reference cost table lists {} MB: recorded discrepancy)",
        plan.total_storage_mb(),
        listed
    ))
}

// 3 -------------------------------------------------------------------------

fn improvement_arithmetic() -> Check {
    let table = reference::table(10, &NominalSizes::default()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (cluster, want) in [(1usize, 25.0), (3, 60.2)] {
        let gm = table.get(cluster, Tier::Gm, 10).ok_or("missing GM row")?.mae;
        let lk = table.get(cluster, Tier::Lk, 10).ok_or("missing Lk row")?.mae;
        let got = 100.0 * improvement(gm, lk).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 0.5, format!("C{cluster}: {got:.2}% vs {want}%"))?;
        parts.push(format!("C{cluster} {got:.1}%"));
    }
    Ok(parts.join(", "))
}

// 4 -------------------------------------------------------------------------

fn clustering_recovery() -> Check {
    let mut parts = Vec::new();
    for s in 0..5u64 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig {
            seed: 100 + s,
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        // Peak-hour and level differences dwarf the noise (amplitude 0.7 vs noise 0.05).
        cfg.synthetic = SyntheticConfig {
            archetypes: vec![
                archetype("morning", 20, 6.0e6, 0.7, 0.8, 0.05, 0.5, 9.0),
                archetype("afternoon", 20, 3.0e6, 0.7, 0.4, 0.05, 0.5, 15.0),
                archetype("evening", 20, 1.0e6, 0.7, 0.0, 0.05, 0.5, 21.0),
            ],
            days: 14,
            step_w: 600,
            origin: DEFAULT_SYNTHETIC_ORIGIN,
        };
        for stage in [Stage::Ingest, Stage::Features, Stage::Reduce, Stage::Cluster] {
            run_stage(stage, &cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        }
        let clusters: ClusterArtifact =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("clusters.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let labels = read_labels(&dir.path().join("labels.csv"))?;
        let planted: Vec<usize> = clusters.ap_ids.iter().map(|id| labels[id]).collect();
        let k = clusters.selection.best.k;
        let ari = adjusted_rand_index(&planted, &clusters.selection.best.assignments).map_err(|e| e.to_string())?;
        ensure(k == 3 && ari >= 0.9, format!("seed {}: k = {k}, ARI = {ari:.3}", cfg.seed))?;
        parts.push(format!("{ari:.3}"));
    }
    Ok(format!("k = 3 on all seeds, ARI [{}]", parts.join(", ")))
}

fn read_labels(path: &Path) -> std::result::Result<BTreeMap<String, usize>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| e.to_string())?;
        out.insert(row[0].to_owned(), row[1].parse::<usize>().map_err(|e| e.to_string())?);
    }
    Ok(out)
}

// 5 -------------------------------------------------------------------------

/// Minimum WCSS over every split of the points into two non-empty groups.
fn exhaustive_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    // Point 0 stays in group 0, so each split is visited once.
    for mask in 1u32..(1 << (n - 1)) {
        let full = mask << 1;
        let mut total = 0.0;
        for g in 0..2u32 {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| (full >> i) & 1 == g).map(|i| &points[i]).collect();
            for j in 0..d {
                let m = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                total += members.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>();
            }
        }
        best = best.min(total);
    }
    best
}

fn kmeans_oracle() -> Check {
    let mut rng = seed::rng(5);
    let params = KMeansParams { restarts: 32, ..Default::default() };
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let n = rng.random_range(3..=8);
        let r = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = kmeans(&points, 2, inst, &params).map_err(|e| e.to_string())?.wcss;
        let want = exhaustive_two_means(&points);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, format!("instance {inst}: {got} vs exhaustive {want}"))?;
    }
    Ok(format!("50 instances, max |WCSS - exhaustive| = {worst:.1e}"))
}

// 6 -------------------------------------------------------------------------

fn pca_correctness() -> Check {
    let mut rng = seed::rng(6);
    let (mut rec, mut orth, mut var) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(5..=40);
        let d = rng.random_range(2..=8);
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let pca = pca_fit(&m, 1.0).map_err(|e| e.to_string())?;
        let full = pca.with_retained(pca.dim());
        let coords = full.transform(&m).map_err(|e| e.to_string())?;
        for (row, c) in m.iter().zip(&coords) {
            let back = full.inverse_transform_row(c);
            for (a, b) in row.iter().zip(&back) {
                rec = rec.max((a - b).abs());
            }
        }
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = full.components[i].iter().zip(&full.components[j]).map(|(a, b)| a * b).sum();
                orth = orth.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        for j in 0..d {
            let col: Vec<f64> = coords.iter().map(|c| c[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            var = var.max((v - full.eigenvalues[j]).abs());
        }
    }
    ensure(rec <= 1e-8, format!("reconstruction {rec:e}"))?;
    ensure(orth <= 1e-9, format!("orthonormality {orth:e}"))?;
    ensure(var <= 1e-8, format!("variance {var:e}"))?;
    Ok(format!("20 matrices: reconstruction {rec:.1e}, orthonormality {orth:.1e}, variance {var:.1e}"))
}

// 7 -------------------------------------------------------------------------

fn gradient_checks() -> Check {
    let mut rng = seed::rng(7);
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let spec = ModelSpec {
            tier: Tier::Lk,
            lstm_layers: rng.random_range(1..=2),
            hidden_size: rng.random_range(1..=4),
            lookback: rng.random_range(1..=6),
            horizon: rng.random_range(1..=3),
            input_channels: rng.random_range(1..=2),
        };
        let d = gradient_check(&spec, 1000 + i).map_err(|e| e.to_string())?;
        ensure(d < 1e-4, format!("model {i} {spec:?}: deviation {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("20 models, worst deviation {worst:.1e}"))
}

// 8 -------------------------------------------------------------------------

/// Heterogeneous population: the volatile archetype alternates around its level
/// (negative lag correlation), the two easy ones drift smoothly (positive lag
/// correlation). With a one-step lookback the global model cannot tell them apart.
fn heterogeneous_population() -> SyntheticConfig {
    SyntheticConfig {
        archetypes: vec![
            archetype("volatile", 4, 6.0e6, 0.1, 0.0, 0.15, -0.9, 11.0),
            archetype("easy_a", 8, 3.0e6, 0.6, 0.3, 0.15, 0.9, 15.0),
            archetype("easy_b", 8, 1.0e6, 0.4, 0.1, 0.15, 0.9, 21.0),
        ],
        days: 14,
        step_w: 600,
        origin: DEFAULT_SYNTHETIC_ORIGIN,
    }
}

fn specialization_gain(run_seed: u64) -> std::result::Result<(f64, f64, f64), String> {
    let data = generate_synthetic(&heterogeneous_population(), run_seed).map_err(|e| e.to_string())?;
    let window = WindowConfig { lookback: 1, stride: 4, ..Default::default() };
    let train = TrainConfig { max_epochs: 40, patience: 5, seed: run_seed, ..Default::default() };
    let gm_spec = ModelSpec::for_tier(Tier::Gm, 1, 1, 1);
    let lk_spec = ModelSpec::for_tier(Tier::Lk, 1, 1, 1);
    let (gm, _) = train_global(&data.series, &gm_spec, &window, &train).map_err(|e| e.to_string())?;
    let members: Vec<usize> = (0..data.labels.len()).filter(|&i| data.labels[i] == 0).collect();
    let (lk, _) = train_cluster(&data.series, &members, 0, &lk_spec, &window, &train).map_err(|e| e.to_string())?;
    let models = [
        EvalModel { tier: Tier::Gm, cluster: None, model: &gm },
        EvalModel { tier: Tier::Lk, cluster: Some(0), model: &lk },
    ];
    let table = build_performance_table(&models, &data.series, &data.labels, 3, &window, &NominalSizes::default())
        .map_err(|e| e.to_string())?;
    let g = table.get(0, Tier::Gm, 10).ok_or("missing GM row")?.mae;
    let l = table.get(0, Tier::Lk, 10).ok_or("missing Lk row")?.mae;
    Ok((g, l, improvement(g, l).map_err(|e| e.to_string())?))
}

fn specialization_benefit() -> Check {
    let mut gains = Vec::new();
    let mut parts = Vec::new();
    for s in 1..=3u64 {
        let (g, l, gain) = specialization_gain(s)?;
        parts.push(format!("seed {s}: GM {g:.4} Lk {l:.4} ({:+.1}%)", 100.0 * gain));
        gains.push(gain);
    }
    gains.sort_by(f64::total_cmp);
    let median = gains[1];
    ensure(median >= 0.20, format!("median improvement {:.1}% < 20%; {}", 100.0 * median, parts.join("; ")))?;
    Ok(format!("median {:.1}%; {}", 100.0 * median, parts.join("; ")))
}

// 9 -------------------------------------------------------------------------

const TINY: &str = r#"
seed = 3
[synthetic]
days = 7
step_w = 600
[[synthetic.archetypes]]
name = "busy"
count = 5
base_level = 8e6
diurnal_amplitude = 0.9
weekend_contrast = 0.9
noise_scale = 0.3
noise_ar = -0.5
peak_hour = 11
[[synthetic.archetypes]]
name = "calm"
count = 5
base_level = 1e6
diurnal_amplitude = 0.3
weekend_contrast = 0.1
noise_scale = 0.05
noise_ar = 0.9
peak_hour = 20
[[synthetic.archetypes]]
name = "mid"
count = 5
base_level = 3e6
diurnal_amplitude = 0.6
weekend_contrast = 0.5
noise_scale = 0.1
noise_ar = 0.8
peak_hour = 15
[cluster]
k_max = 4
[forecast]
window = { lookback = 12, stride = 6 }
train = { max_epochs = 3 }
[forecast.architectures]
gm = { layers = 1, hidden = 8 }
lk = { layers = 1, hidden = 8 }
lkv2 = { layers = 2, hidden = 8 }
"#;

fn conservation_and_determinism() -> Check {
    let mut rng = seed::rng(9);
    let step = 600u64;
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let start = DEFAULT_SYNTHETIC_ORIGIN;
        let windows = rng.random_range(1..=200) as i64;
        let span = Span::new(start, start + windows * step as i64).map_err(|e| e.to_string())?;
        let mut records = Vec::new();
        for _ in 0..rng.random_range(1..=300) {
            // Some records straddle the span edges; only their in-span share counts.
            let a = span.start + rng.random_range(-3_000..(span.end - span.start + 3_000));
            let len = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..20_000) };
            let ap = format!("ap{}", rng.random_range(0..6));
            let client = format!("c{}", rng.random_range(0..40));
            let rec = AssociationRecord::new(ap, client, a, a + len, rng.random_range(0..5_000_000), rng.random_range(0..5_000_000))
                .map_err(|e| e.to_string())?;
            records.push(rec);
        }
        let expected: f64 = records
            .iter()
            .map(|r| {
                if r.start_time == r.end_time {
                    let inside = r.start_time >= span.start && r.start_time < span.end;
                    if inside { r.total_bytes() as f64 } else { 0.0 }
                } else {
                    let overlap = (r.end_time.min(span.end) - r.start_time.max(span.start)).max(0);
                    r.total_bytes() as f64 * overlap as f64 / r.duration() as f64
                }
            })
            .sum();
        for mode in [ChannelMode::Summed, ChannelMode::Separate] {
            let series = derive_load_series(&records, step, span, mode).map_err(|e| e.to_string())?;
            let got: f64 = series.iter().map(LoadSeries::total_load).sum();
            let rel = (got - expected).abs() / expected.max(1.0);
            worst = worst.max(rel);
            ensure(rel <= 1e-6, format!("conservation: {got} vs {expected}"))?;
        }
    }

    let mut manifests = Vec::new();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = PipelineConfig::from_toml(TINY).map_err(|e| e.to_string())?;
        cfg.out_dir = dir.path().to_path_buf();
        reports.push(run_all(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?);
        let raw = std::fs::read_to_string(dir.path().join("manifest.json")).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        manifests.push(v["artifacts"].clone());
    }
    let files = manifests[0].as_object().map_or(0, |m| m.len());
    ensure(files > 0, "empty manifest")?;
    ensure(manifests[0] == manifests[1], "artifact hashes differ between reruns")?;
    ensure(reports[0] == reports[1], "report text differs between reruns")?;
    Ok(format!("25 record sets, worst relative error {worst:.1e}; rerun reproduced {files} artifacts byte for byte"))
}

// 10 ------------------------------------------------------------------------

fn hourly_week(f: impl Fn(usize) -> f64) -> LoadSeries {
    let load: Vec<f64> = (0..168).map(f).collect();
    LoadSeries {
        ap_id: "x".into(),
        origin: DEFAULT_SYNTHETIC_ORIGIN,
        step_w: 3600,
        active_users: vec![4; load.len()],
        load,
        uplink: None,
        downlink: None,
    }
}

fn feature_schema() -> Check {
    let names = feature_names();
    let mut unique = names.to_vec();
    unique.sort();
    unique.dedup();
    ensure(names.len() == 35 && FEATURE_COUNT == 35 && unique.len() == 35, format!("{} names", names.len()))?;

    let cal = CalendarConfig::default();
    let tert = ByteTertiles { low: 1.0, high: 3.0 };
    let c = 2.5;
    let f = extract_features(&hourly_week(|_| c), &cal, &tert).map_err(|e| e.to_string())?;
    ensure(f.values.len() == 35, "vector length")?;
    ensure(f.get("bytes_mean") == Some(c) && f.get("bytes_std") == Some(0.0), "constant: bytes mean/std")?;
    ensure(f.get("peak_to_mean") == Some(1.0), "constant: peak_to_mean")?;
    ensure(f.get("zero_window_fraction") == Some(0.0), "constant: zero_window_fraction")?;
    for name in names.iter().filter(|n| n.ends_with("_std")) {
        ensure(f.get(name) == Some(0.0), format!("constant: {name} = {:?}", f.get(name)))?;
    }

    let night = extract_features(
        &hourly_week(|i| if matches!(cal.period((i % 24) as f64), Period::Night) { 3.0 } else { 0.0 }),
        &cal,
        &tert,
    )
    .map_err(|e| e.to_string())?;
    ensure(night.get("night_load_ratio") == Some(1.0), format!("night-only ratio {:?}", night.get("night_load_ratio")))?;
    Ok("35 unique names; constant-series and night-only invariants exact".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, Duration, fn() -> Check); 10] = [
        ("cost table reproduction", Duration::from_secs(1), cost_table),
        ("policy reproduction", Duration::from_secs(1), policy_reference),
        ("improvement arithmetic", Duration::from_secs(1), improvement_arithmetic),
        ("clustering recovery", Duration::from_secs(60), clustering_recovery),
        ("k-means oracle", Duration::from_secs(10), kmeans_oracle),
        ("PCA correctness", Duration::from_secs(5), pca_correctness),
        ("LSTM gradient check", Duration::from_secs(30), gradient_checks),
        ("specialization benefit", Duration::from_secs(15 * 60), specialization_benefit),
        ("conservation and determinism", Duration::from_secs(30), conservation_and_determinism),
        ("feature schema", Duration::from_secs(1), feature_schema),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
