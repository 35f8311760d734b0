//! Stage-by-stage pipeline over plain CSV/JSON artifacts in one output directory.
//!
//! Every stochastic step draws its seed from `seed::derive(config.seed, [stage, task])`.
//! After each stage `manifest.json` is rewritten with the SHA-256 of every file in
//! the output directory and an echo of the configuration.

mod config;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{select_k, KSelection};
use crate::deploy::{self, plan_deployment, plan_summary, plan_uniform, DeploymentPlan, PlanSummary};
use crate::error::{Error, Result};
use crate::eval::{self, build_performance_table, improvement, EvalModel, PerformanceTable};
use crate::features::{self, ByteTertiles, FeatureVector, Scaler};
use crate::forecast::{train_cluster, train_global, ForecastModel, Tier, TrainConfig, TrainReport, TrainedOn};
use crate::ingest::{self, IngestSummary, LoadSeries, Span};
use crate::reduce::{pca_fit, PcaModel};
use crate::seed;

pub use config::{
    demo_synthetic, Architecture, Architectures, ClusterConfig, FeatureConfig, ForecastConfig, InputConfig, InputKind,
    PipelineConfig, ReduceConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Features,
    Reduce,
    Cluster,
    Train,
    Evaluate,
    Plan,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Reduce,
        Stage::Cluster,
        Stage::Train,
        Stage::Evaluate,
        Stage::Plan,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Reduce => "reduce",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Plan => "plan",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Per-invocation overrides that do not belong in the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Restrict train/evaluate/plan to one horizon (minutes).
    pub horizon_minutes: Option<u32>,
}

/// Result of one stage: files written (relative to the output directory) and,
/// for `report`, a human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct StageOutcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: Option<String>,
}

pub const MANIFEST: &str = "manifest.json";

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    opts: &'a RunOptions,
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn require(&self, name: &str, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { name: name.to_owned(), path: p })
        }
    }

    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        self.written.push(PathBuf::from(rel));
        Ok(BufWriter::new(f))
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let mut w = self.create(rel)?;
        w.write_all(text.as_bytes()).map_err(|e| Error::io(rel, e))?;
        w.flush().map_err(|e| Error::io(rel, e))
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(rel, &text)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str, rel: &str) -> Result<T> {
        let p = self.require(name, rel)?;
        let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    fn horizons(&self) -> Result<Vec<u32>> {
        match self.opts.horizon_minutes {
            Some(h) => {
                self.cfg.horizon_steps(h)?;
                Ok(vec![h])
            }
            None => Ok(self.cfg.forecast.horizons_minutes.clone()),
        }
    }

    fn stage_seed(&self, stage: Stage, task: &str) -> u64 {
        seed::derive(self.cfg.seed, &[stage.name(), task])
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

/// Runs one stage, then refreshes the manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, opts: &RunOptions) -> Result<StageOutcome> {
    cfg.validate()?;
    let root = cfg.out_dir.as_path();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut ctx = Ctx { cfg, opts, root, written: Vec::new() };
    info!("stage {stage}");
    let summary = match stage {
        Stage::Ingest => stage_ingest(&mut ctx).map(|_| None),
        Stage::Features => stage_features(&mut ctx).map(|_| None),
        Stage::Reduce => stage_reduce(&mut ctx).map(|_| None),
        Stage::Cluster => stage_cluster(&mut ctx).map(|_| None),
        Stage::Train => stage_train(&mut ctx).map(|_| None),
        Stage::Evaluate => stage_evaluate(&mut ctx).map(|_| None),
        Stage::Plan => stage_plan(&mut ctx).map(|_| None),
        Stage::Report => stage_report(&mut ctx).map(Some),
    }?;
    write_manifest(cfg)?;
    Ok(StageOutcome { artifacts: ctx.written, summary })
}

/// Runs every stage in order; returns the report summary.
pub fn run_all(cfg: &PipelineConfig, opts: &RunOptions) -> Result<String> {
    let mut summary = String::new();
    for stage in Stage::ALL {
        if let Some(s) = run_stage(stage, cfg, opts)?.summary {
            summary = s;
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    ap_id: String,
    label: usize,
    archetype: String,
}

fn stage_ingest(ctx: &mut Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let (records, mut series) = match cfg.input.kind {
        InputKind::Synthetic => {
            let data = ingest::generate_synthetic(&cfg.synthetic, ctx.stage_seed(Stage::Ingest, "synthetic"))?;
            let mut labels: Vec<LabelRow> = data
                .series
                .iter()
                .zip(&data.labels)
                .map(|(s, &l)| LabelRow { ap_id: s.ap_id.clone(), label: l, archetype: data.archetype_names[l].clone() })
                .collect();
            labels.sort_by(|a, b| a.ap_id.cmp(&b.ap_id));
            let mut w = csv::Writer::from_writer(ctx.create("labels.csv")?);
            for row in &labels {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io("labels.csv", e))?;
            (Vec::new(), data.series)
        }
        InputKind::Csv => {
            let path = cfg.input.path.as_ref().expect("validated");
            let report = ingest::parse_records(open(path)?, &cfg.input.columns)?;
            if !report.errors.is_empty() {
                warn!("{} malformed rows skipped (see ingest_errors.csv)", report.errors.len());
                let mut w = csv::Writer::from_writer(ctx.create("ingest_errors.csv")?);
                for e in &report.errors {
                    w.serialize(e)?;
                }
                w.flush().map_err(|e| Error::io("ingest_errors.csv", e))?;
            }
            let span = match (cfg.input.span_start, cfg.input.span_end) {
                (Some(s), Some(e)) => Span::new(s, e)?,
                _ => Span::covering_days(&report.records).ok_or(Error::Empty("association records"))?,
            };
            let series = ingest::derive_load_series(&report.records, cfg.input.step_w, span, cfg.input.channel_mode)?;
            (report.records, series)
        }
    };
    series.sort_by(|a, b| a.ap_id.cmp(&b.ap_id));
    let summary = ingest::summarize(&records, &series);
    ingest::write_series_csv(ctx.create("load_series.csv")?, &series)?;
    ctx.write_json("summary.json", &summary)?;
    info!("{} series of {} windows", summary.ap_count, summary.window_count);
    Ok(())
}

fn load_series(ctx: &Ctx<'_>) -> Result<Vec<LoadSeries>> {
    let summary: IngestSummary = ctx.read_json("ingest summary", "summary.json")?;
    let p = ctx.require("load_series", "load_series.csv")?;
    ingest::read_series_csv(open(&p)?, &summary)
}

// ---------------------------------------------------------------- features

fn stage_features(ctx: &mut Ctx<'_>) -> Result<()> {
    let series = load_series(ctx)?;
    let fc = ctx.cfg.features;
    let (features, tertiles) = features::extract_all(&series, fc.transform, &fc.calendar)?;
    let (_, scaler) = features::scale_features(&features)?;
    features::write_features_csv(ctx.create("features.csv")?, &features)?;
    ctx.write_json("scaler.json", &scaler)?;
    ctx.write_json("tertiles.json", &tertiles)?;
    let degenerate: Vec<&str> = features::feature_names()
        .iter()
        .zip(&scaler.degenerate)
        .filter(|(_, &d)| d)
        .map(|(n, _)| n.as_str())
        .collect();
    if !degenerate.is_empty() {
        warn!("constant features: {}", degenerate.join(", "));
    }
    Ok(())
}

fn scaled_features(ctx: &Ctx<'_>) -> Result<(Vec<FeatureVector>, Vec<Vec<f64>>)> {
    let p = ctx.require("features", "features.csv")?;
    let features = features::read_features_csv(open(&p)?)?;
    let scaler: Scaler = ctx.read_json("scaler", "scaler.json")?;
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let scaled = scaler.transform(&rows)?;
    Ok((features, scaled))
}

// ---------------------------------------------------------------- reduce

fn stage_reduce(ctx: &mut Ctx<'_>) -> Result<()> {
    let (features, scaled) = scaled_features(ctx)?;
    let pca = pca_fit(&scaled, ctx.cfg.reduce.variance_target)?;
    let reduced = pca.transform(&scaled)?;
    let ids: Vec<String> = features.iter().map(|f| f.ap_id.clone()).collect();
    pca.write_reduced_csv(ctx.create("reduced.csv")?, &ids, &reduced)?;
    info!("PCA keeps {} of {} components ({:.3} of variance)", pca.retained, pca.dim(), pca.cumulative_explained());
    ctx.write_json("pca.json", &pca)?;
    Ok(())
}

fn reduced_points(ctx: &Ctx<'_>) -> Result<(Vec<String>, Vec<Vec<f64>>, PcaModel, Vec<Vec<f64>>)> {
    let pca: PcaModel = ctx.read_json("pca", "pca.json")?;
    let (features, scaled) = scaled_features(ctx)?;
    let points = pca.transform(&scaled)?;
    Ok((features.into_iter().map(|f| f.ap_id).collect(), points, pca, scaled))
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub ap_ids: Vec<String>,
    pub seed: u64,
    pub selection: KSelection,
}

fn stage_cluster(ctx: &mut Ctx<'_>) -> Result<()> {
    let (ids, points, _, _) = reduced_points(ctx)?;
    let c = ctx.cfg.cluster;
    let n = points.len();
    let k_max = c.k_max.min(n.saturating_sub(1));
    if k_max < c.k_min {
        return Err(Error::InvalidInput(format!("{n} access points are too few for k >= {}", c.k_min)));
    }
    let seed = ctx.stage_seed(Stage::Cluster, "select_k");
    let selection = select_k(&points, c.k_min, k_max, seed, &c.kmeans)?;
    info!("selected k = {} (silhouette {:?})", selection.best.k, selection.best.silhouette);
    let mut w = csv::Writer::from_writer(ctx.create("clusters.csv")?);
    w.write_record(["ap_id", "cluster"])?;
    for (id, a) in ids.iter().zip(&selection.best.assignments) {
        w.write_record([id.as_str(), &a.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("clusters.csv", e))?;
    ctx.write_json("clusters.json", &ClusterArtifact { ap_ids: ids, seed, selection })?;
    Ok(())
}

fn load_clusters(ctx: &Ctx<'_>, series: &[LoadSeries]) -> Result<ClusterArtifact> {
    let clusters: ClusterArtifact = ctx.read_json("clusters", "clusters.json")?;
    let same = clusters.ap_ids.len() == series.len() && clusters.ap_ids.iter().zip(series).all(|(a, s)| *a == s.ap_id);
    if !same {
        return Err(Error::InvalidInput("clusters.json does not match load_series.csv; rerun upstream stages".into()));
    }
    Ok(clusters)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub tier: Tier,
    pub cluster: Option<usize>,
    pub horizon_minutes: u32,
    pub file: String,
    pub loss_file: String,
    pub best_epoch: usize,
    pub param_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelIndex {
    pub models: Vec<ModelEntry>,
}

fn model_name(tier: Tier, cluster: Option<usize>, horizon_minutes: u32) -> String {
    match cluster {
        None => format!("{}_{}min", tier.as_str().to_lowercase(), horizon_minutes),
        Some(c) => format!("{}_c{c}_{}min", tier.as_str().to_lowercase(), horizon_minutes),
    }
}

fn stage_train(ctx: &mut Ctx<'_>) -> Result<()> {
    let series = load_series(ctx)?;
    let clusters = load_clusters(ctx, &series)?;
    let best = &clusters.selection.best;
    let cfg = ctx.cfg;
    let mut tasks: Vec<(Tier, Option<usize>, u32)> = Vec::new();
    for h in ctx.horizons()? {
        tasks.push((Tier::Gm, None, h));
        for &tier in &cfg.forecast.specialized {
            tasks.extend((0..best.k).map(|c| (tier, Some(c), h)));
        }
    }
    let results: Vec<(ModelEntry, ForecastModel, TrainReport)> = tasks
        .par_iter()
        .map(|&(tier, cluster, h)| {
            let name = model_name(tier, cluster, h);
            let spec = cfg.model_spec(tier, h)?;
            let train_cfg = TrainConfig { seed: ctx.stage_seed(Stage::Train, &name), ..cfg.forecast.train };
            let (model, report) = match cluster {
                None => train_global(&series, &spec, &cfg.forecast.window, &train_cfg)?,
                Some(c) => train_cluster(&series, &best.members(c), c, &spec, &cfg.forecast.window, &train_cfg)?,
            };
            info!("{name}: best epoch {} val MAE {:.5}", report.best_epoch, report.history[report.best_epoch].val_mae);
            let entry = ModelEntry {
                file: format!("models/{name}.json"),
                loss_file: format!("losses/{name}.csv"),
                name,
                tier,
                cluster,
                horizon_minutes: h,
                best_epoch: report.best_epoch,
                param_count: model.param_count,
            };
            Ok((entry, model, report))
        })
        .collect::<Result<_>>()?;

    // Keep entries for horizons not retrained in this run.
    let mut index: ModelIndex = if ctx.path("models/index.json").is_file() {
        ctx.read_json("model index", "models/index.json")?
    } else {
        ModelIndex::default()
    };
    for (entry, model, report) in results {
        ctx.write_text(&entry.file, &model.to_json()?)?;
        ctx.write_text(&entry.loss_file, &report.to_csv())?;
        index.models.retain(|m| m.name != entry.name);
        index.models.push(entry);
    }
    index.models.sort_by(|a, b| (a.horizon_minutes, a.cluster, a.tier).cmp(&(b.horizon_minutes, b.cluster, b.tier)));
    ctx.write_json("models/index.json", &index)?;
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn stage_evaluate(ctx: &mut Ctx<'_>) -> Result<()> {
    let index: ModelIndex = ctx.read_json("models", "models/index.json")?;
    let series = load_series(ctx)?;
    let clusters = load_clusters(ctx, &series)?;
    let horizons = ctx.horizons()?;
    let entries: Vec<&ModelEntry> = index.models.iter().filter(|m| horizons.contains(&m.horizon_minutes)).collect();
    let models = entries
        .iter()
        .map(|e| {
            let p = ctx.require(&e.name, &e.file)?;
            let raw = fs::read_to_string(&p).map_err(|err| Error::io(&p, err))?;
            ForecastModel::from_json(&raw)
        })
        .collect::<Result<Vec<_>>>()?;
    let eval_models: Vec<EvalModel<'_>> = entries
        .iter()
        .zip(&models)
        .map(|(e, m)| EvalModel {
            tier: e.tier,
            cluster: match m.trained_on {
                TrainedOn::All => None,
                TrainedOn::Cluster(c) => Some(c),
            },
            model: m,
        })
        .collect();
    let best = &clusters.selection.best;
    let mut table = build_performance_table(
        &eval_models,
        &series,
        &best.assignments,
        best.k,
        &ctx.cfg.forecast.window,
        &ctx.cfg.deploy.nominal_sizes,
    )?;
    table.provenance.insert("seed".into(), ctx.cfg.seed.to_string());
    table.provenance.insert("k".into(), best.k.to_string());
    table.write_csv(ctx.create("performance_table.csv")?)?;
    ctx.write_text("performance_table.json", &table.to_json()?)?;
    Ok(())
}

// ---------------------------------------------------------------- plan

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub scalable: DeploymentPlan,
    pub global_only: DeploymentPlan,
    pub all_specialized: DeploymentPlan,
}

const COST_LABELS: [&str; 3] = ["Global Model", "All Cluster-Specific", "Scalable"];

fn cost_rows(plans: &PlanArtifact, table: &PerformanceTable) -> Result<[(&'static str, PlanSummary); 3]> {
    Ok([
        (COST_LABELS[0], plan_summary(&plans.global_only, table)?),
        (COST_LABELS[1], plan_summary(&plans.all_specialized, table)?),
        (COST_LABELS[2], plan_summary(&plans.scalable, table)?),
    ])
}

fn stage_plan(ctx: &mut Ctx<'_>) -> Result<()> {
    let raw = fs::read_to_string(ctx.require("performance_table", "performance_table.json")?)
        .map_err(|e| Error::io("performance_table.json", e))?;
    let table = PerformanceTable::from_json(&raw)?;
    let policy = ctx.cfg.deploy;
    let wanted = ctx.horizons()?;
    let available = table.horizons();
    if let Some(h) = wanted.iter().find(|h| ctx.opts.horizon_minutes.is_some() && !available.contains(h)) {
        return Err(Error::InvalidInput(format!("performance table has no {h}-minute rows; rerun train and evaluate")));
    }
    for h in available.into_iter().filter(|h| wanted.contains(h)) {
        let plans = PlanArtifact {
            scalable: plan_deployment(&table, &policy, h)?,
            global_only: plan_uniform(&table, Tier::Gm, &policy, h)?,
            all_specialized: plan_uniform(&table, Tier::Lkv2, &policy, h)?,
        };
        deploy::write_cost_summary(ctx.create(&format!("cost_summary_{h}min.csv"))?, &cost_rows(&plans, &table)?)?;
        ctx.write_json(&format!("plan_{h}min.json"), &plans)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- report

fn stage_report(ctx: &mut Ctx<'_>) -> Result<String> {
    let (ids, _, pca, scaled) = reduced_points(ctx)?;
    let clusters: ClusterArtifact = ctx.read_json("clusters", "clusters.json")?;
    if clusters.ap_ids != ids {
        return Err(Error::InvalidInput("clusters.json does not match features.csv; rerun upstream stages".into()));
    }
    let raw = fs::read_to_string(ctx.require("performance_table", "performance_table.json")?)
        .map_err(|e| Error::io("performance_table.json", e))?;
    let table = PerformanceTable::from_json(&raw)?;
    let best = &clusters.selection.best;
    let mut text = String::new();
    let _ = writeln!(text, "access points: {}", ids.len());
    let _ = writeln!(text, "PCA components retained: {} ({:.1}% of variance)", pca.retained, 100.0 * pca.cumulative_explained());
    let _ = writeln!(text, "clusters: k = {}, sizes {:?}, silhouette {:.3}", best.k, best.sizes(), best.silhouette.unwrap_or(f64::NAN));

    // Cluster scatter on the first two principal axes.
    let two = pca.with_retained(pca.dim().min(2));
    let mut w = csv::Writer::from_writer(ctx.create("scatter.csv")?);
    w.write_record(["ap_id", "pc1", "pc2", "cluster"])?;
    for ((id, row), c) in ids.iter().zip(&scaled).zip(&best.assignments) {
        let p = two.transform_row(row)?;
        w.write_record([id.clone(), p[0].to_string(), p.get(1).copied().unwrap_or(0.0).to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("scatter.csv", e))?;

    let mut improvements = csv::Writer::from_writer(ctx.create("improvement.csv")?);
    improvements.write_record(["horizon_minutes", "cluster", "base_tier", "new_tier", "improvement"])?;
    let mut costs = csv::Writer::from_writer(ctx.create("cost_summary.csv")?);
    costs.write_record(["horizon_minutes", "label", "models_deployed", "storage_mb", "average_mae"])?;
    for h in table.horizons() {
        let mut cmp = csv::Writer::from_writer(ctx.create(&format!("mae_comparison_{h}min.csv"))?);
        cmp.write_record(["cluster", "gm_mae", "lk_mae", "lkv2_mae", "gm_p99_mb"])?;
        let _ = writeln!(text, "\n{h}-minute horizon");
        let _ = writeln!(text, "  cluster  GM MAE     Lk MAE     gain");
        for c in 0..table.clusters() {
            let mae_of = |t: Tier| table.get(c, t, h).map(|r| r.mae);
            let cell = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
            let gm = table.get(c, Tier::Gm, h);
            cmp.write_record([
                c.to_string(),
                cell(mae_of(Tier::Gm)),
                cell(mae_of(Tier::Lk)),
                cell(mae_of(Tier::Lkv2)),
                cell(gm.map(|r| r.p99_abs_error_mb)),
            ])?;
            let mut line = format!("  {c:<7}  {:<9.5}  ", mae_of(Tier::Gm).unwrap_or(f64::NAN));
            for (base, new) in [(Tier::Gm, Tier::Lk), (Tier::Gm, Tier::Lkv2), (Tier::Lk, Tier::Lkv2)] {
                if let (Some(b), Some(n)) = (mae_of(base), mae_of(new)) {
                    if b > 0.0 {
                        let imp = improvement(b, n)?;
                        improvements.write_record([h.to_string(), c.to_string(), base.to_string(), new.to_string(), imp.to_string()])?;
                        if (base, new) == (Tier::Gm, Tier::Lk) {
                            let _ = write!(line, "{n:<9.5}  {:+.1}%", 100.0 * imp);
                        }
                    }
                }
            }
            let _ = writeln!(text, "{line}");
        }
        cmp.flush().map_err(|e| Error::io("mae comparison", e))?;

        let plan_rel = format!("plan_{h}min.json");
        if ctx.path(&plan_rel).is_file() {
            let plans: PlanArtifact = ctx.read_json("plan", &plan_rel)?;
            let tiers: Vec<String> = plans.scalable.tiers().iter().map(|t| t.to_string()).collect();
            let _ = writeln!(text, "  plan: [{}]", tiers.join(", "));
            for (label, s) in cost_rows(&plans, &table)? {
                let mb = s.total_storage as f64 / eval::BYTES_PER_MB;
                let _ = writeln!(
                    text,
                    "  {label:<22} {} models  {mb:>5.2} MB  avg MAE {:.5}",
                    s.models_deployed,
                    s.average_mae.unwrap_or(f64::NAN)
                );
                costs.write_record([
                    h.to_string(),
                    label.to_string(),
                    s.models_deployed.to_string(),
                    mb.to_string(),
                    s.average_mae.map(|m| m.to_string()).unwrap_or_default(),
                ])?;
            }
            if let Ok(saving) = deploy::memory_saving(&plans.all_specialized, &plans.scalable) {
                let _ = writeln!(text, "  memory saving vs all cluster-specific: {:.1}%", 100.0 * saving);
            }
        }
    }
    improvements.flush().map_err(|e| Error::io("improvement.csv", e))?;
    costs.flush().map_err(|e| Error::io("cost_summary.csv", e))?;
    ctx.write_text("report.txt", &text)?;
    Ok(text)
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: serde_json::Value,
    /// Hashes of external inputs (the association log for CSV input).
    pub inputs: BTreeMap<String, String>,
    /// Relative path -> SHA-256 of every artifact in the output directory.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = open(path)?;
    std::io::copy(&mut f, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.strip_prefix(root).map(|p| p != Path::new(MANIFEST)).unwrap_or(false) {
            out.push(path);
        }
    }
    Ok(())
}

pub fn write_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let root = cfg.out_dir.as_path();
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    let mut artifacts = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        artifacts.insert(rel, sha256_file(&f)?);
    }
    let mut inputs = BTreeMap::new();
    if let (InputKind::Csv, Some(p)) = (cfg.input.kind, &cfg.input.path) {
        if p.is_file() {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    let manifest = Manifest { seed: cfg.seed, config: serde_json::to_value(cfg)?, inputs, artifacts };
    let p = root.join(MANIFEST);
    fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// Loads the tertiles written by the features stage.
pub fn read_tertiles(out_dir: &Path) -> Result<ByteTertiles> {
    let p = out_dir.join("tertiles.json");
    if !p.is_file() {
        return Err(Error::MissingArtifact { name: "tertiles".into(), path: p });
    }
    Ok(serde_json::from_reader(open(&p)?)?)
}
