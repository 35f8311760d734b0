use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::KMeansParams;
use crate::deploy::DeployPolicy;
use crate::error::{Error, Result};
use crate::features::{CalendarConfig, Transform};
use crate::forecast::{ModelSpec, Tier, TrainConfig, WindowConfig};
use crate::ingest::{Archetype, ChannelMode, ColumnMap, SyntheticConfig, DEFAULT_SYNTHETIC_ORIGIN};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    /// Association-log CSV, required when `kind = "csv"`.
    pub path: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Window length in seconds.
    pub step_w: u64,
    pub channel_mode: ChannelMode,
    /// Explicit `[start, end)` in epoch seconds; defaults to whole days covering the log.
    pub span_start: Option<i64>,
    pub span_end: Option<i64>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            kind: InputKind::Synthetic,
            path: None,
            columns: ColumnMap::default(),
            step_w: 600,
            channel_mode: ChannelMode::Summed,
            span_start: None,
            span_end: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub transform: Transform,
    pub calendar: CalendarConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceConfig {
    pub variance_target: f64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self { variance_target: crate::reduce::DEFAULT_VARIANCE_TARGET }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub kmeans: KMeansParams,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 6, kmeans: KMeansParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architectures {
    pub gm: Architecture,
    pub lk: Architecture,
    pub lkv2: Architecture,
}

impl Default for Architectures {
    fn default() -> Self {
        let of = |t: Tier| {
            let (layers, hidden) = t.architecture();
            Architecture { layers, hidden }
        };
        Self { gm: of(Tier::Gm), lk: of(Tier::Lk), lkv2: of(Tier::Lkv2) }
    }
}

impl Architectures {
    pub fn of(&self, tier: Tier) -> Architecture {
        match tier {
            Tier::Gm => self.gm,
            Tier::Lk => self.lk,
            Tier::Lkv2 => self.lkv2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Forecast horizons in minutes; each must be a multiple of the window length.
    pub horizons_minutes: Vec<u32>,
    /// `horizon` is ignored here; it follows from `horizons_minutes`.
    pub window: WindowConfig,
    pub train: TrainConfig,
    /// Cluster-specific tiers to train for every cluster.
    pub specialized: Vec<Tier>,
    pub architectures: Architectures,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizons_minutes: vec![10, 60],
            window: WindowConfig { stride: 12, ..Default::default() },
            train: TrainConfig { max_epochs: 10, ..Default::default() },
            specialized: vec![Tier::Lk],
            architectures: Architectures::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: InputConfig,
    pub synthetic: SyntheticConfig,
    pub features: FeatureConfig,
    pub reduce: ReduceConfig,
    pub cluster: ClusterConfig,
    pub forecast: ForecastConfig,
    pub deploy: DeployPolicy,
}

fn archetype(name: &str, count: i64, base: f64, amp: f64, weekend: f64, noise: f64, ar: f64, peak: f64, users: f64) -> Archetype {
    Archetype {
        name: name.into(),
        count,
        base_level: base,
        diurnal_amplitude: amp,
        weekend_contrast: weekend,
        noise_scale: noise,
        noise_ar: ar,
        peak_hour: peak,
        users_base: users,
    }
}

/// Five campus-like AP families, two weeks of 10-minute windows.
pub fn demo_synthetic() -> SyntheticConfig {
    SyntheticConfig {
        archetypes: vec![
            archetype("lecture", 6, 8.0e6, 0.9, 0.9, 0.35, -0.5, 11.0, 40.0),
            archetype("office", 6, 3.0e6, 0.7, 0.8, 0.08, 0.8, 14.0, 12.0),
            archetype("library", 6, 4.0e6, 0.5, 0.4, 0.10, 0.8, 16.0, 25.0),
            archetype("dorm", 6, 5.0e6, 0.6, 0.1, 0.12, 0.7, 22.0, 20.0),
            archetype("outdoor", 6, 0.5e6, 0.3, 0.2, 0.05, 0.9, 13.0, 3.0),
        ],
        days: 14,
        step_w: 600,
        origin: DEFAULT_SYNTHETIC_ORIGIN,
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            input: InputConfig::default(),
            synthetic: demo_synthetic(),
            features: FeatureConfig::default(),
            reduce: ReduceConfig::default(),
            cluster: ClusterConfig::default(),
            forecast: ForecastConfig::default(),
            deploy: DeployPolicy::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(raw: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&raw)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn step_w(&self) -> u64 {
        match self.input.kind {
            InputKind::Synthetic => self.synthetic.step_w,
            InputKind::Csv => self.input.step_w,
        }
    }

    /// Horizon in windows for a horizon in minutes.
    pub fn horizon_steps(&self, minutes: u32) -> Result<usize> {
        let secs = u64::from(minutes) * 60;
        let w = self.step_w();
        if minutes == 0 || w == 0 || secs % w != 0 {
            return Err(Error::Config(format!("horizon {minutes} min is not a positive multiple of the {w} s window")));
        }
        Ok((secs / w) as usize)
    }

    pub fn model_spec(&self, tier: Tier, horizon_minutes: u32) -> Result<ModelSpec> {
        let arch = self.forecast.architectures.of(tier);
        let spec = ModelSpec {
            tier,
            lstm_layers: arch.layers,
            hidden_size: arch.hidden,
            lookback: self.forecast.window.lookback,
            horizon: self.horizon_steps(horizon_minutes)?,
            input_channels: self.forecast.window.input_channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks every section and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                });
            }
        };
        match self.input.kind {
            InputKind::Synthetic => check(self.synthetic.validate()),
            InputKind::Csv => {
                if self.input.path.is_none() {
                    check(Err(Error::Config("input.path is required for csv input".into())));
                }
                if self.input.step_w == 0 {
                    check(Err(Error::Config("input.step_w must be positive".into())));
                }
                if let (Some(s), Some(e)) = (self.input.span_start, self.input.span_end) {
                    if e <= s {
                        check(Err(Error::Config("input.span_end must exceed span_start".into())));
                    }
                }
            }
        }
        check(self.features.calendar.validate());
        let vt = self.reduce.variance_target;
        if !(vt > 0.0 && vt <= 1.0) {
            check(Err(Error::Config(format!("reduce.variance_target {vt} outside (0, 1]"))));
        }
        let c = &self.cluster;
        if c.k_min < 2 || c.k_min > c.k_max {
            check(Err(Error::Config(format!("cluster k range [{}, {}] must satisfy 2 <= k_min <= k_max", c.k_min, c.k_max))));
        }
        if c.kmeans.restarts == 0 || c.kmeans.max_iter == 0 || !(c.kmeans.tol >= 0.0) {
            check(Err(Error::Config("cluster.kmeans needs positive restarts and max_iter and a non-negative tol".into())));
        }
        let f = &self.forecast;
        if f.horizons_minutes.is_empty() {
            check(Err(Error::Config("forecast.horizons_minutes must not be empty".into())));
        }
        for &m in &f.horizons_minutes {
            check(self.horizon_steps(m).map(|_| ()));
        }
        check(f.window.validate());
        check(f.train.validate());
        if f.specialized.contains(&Tier::Gm) {
            check(Err(Error::Config("forecast.specialized lists cluster tiers (Lk, Lkv2), not GM".into())));
        }
        for t in Tier::ALL {
            let a = f.architectures.of(t);
            if a.layers == 0 || a.hidden == 0 {
                check(Err(Error::Config(format!("architecture for {t} must have positive layers and hidden size"))));
            }
        }
        check(self.deploy.validate());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_demo_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.horizon_steps(10).unwrap(), 1);
        assert_eq!(cfg.horizon_steps(60).unwrap(), 6);
        assert_eq!(cfg.model_spec(Tier::Gm, 10).unwrap().param_count(), 50_851);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_overrides() {
        let raw = r#"
            seed = 7
            [cluster]
            k_max = 4
            [forecast]
            horizons_minutes = [10]
            [forecast.architectures.gm]
            layers = 1
            hidden = 4
        "#;
        let cfg = PipelineConfig::from_toml(raw).unwrap();
        assert_eq!((cfg.seed, cfg.cluster.k_min, cfg.cluster.k_max), (7, 2, 4));
        assert_eq!(cfg.forecast.architectures.gm, Architecture { layers: 1, hidden: 4 });
        assert_eq!(cfg.forecast.architectures.lk.hidden, 50);
    }

    #[test]
    fn every_violation_is_listed() {
        let raw = r#"
            [reduce]
            variance_target = 1.5
            [cluster]
            k_min = 1
            [forecast]
            horizons_minutes = [7]
        "#;
        let err = PipelineConfig::from_toml(raw).unwrap_err().to_string();
        assert!(err.contains("variance_target") && err.contains("k range") && err.contains("7 min"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("[input]\nkind = \"csv\"").is_err());
    }
}
