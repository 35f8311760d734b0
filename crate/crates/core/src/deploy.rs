//! Per-cluster model selection under accuracy thresholds and a memory budget.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{improvement, NominalSizes, PerformanceRow, PerformanceTable, BYTES_PER_MB};
use crate::forecast::Tier;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeployPolicy {
    /// Keep the global model when its MAE is at or below this.
    pub absolute_floor: f64,
    /// Minimum relative MAE reduction required to adopt Lk.
    pub relative_threshold: f64,
    /// Escalate to Lkv2 when the Lk MAE stays above this.
    pub escalation_threshold: f64,
    /// `None` means unlimited.
    pub memory_budget: Option<u64>,
    /// Escalate to Lkv2 even without a measured row for it.
    pub escalate_unmeasured: bool,
    pub nominal_sizes: NominalSizes,
}

impl Default for DeployPolicy {
    fn default() -> Self {
        Self {
            absolute_floor: 0.001,
            relative_threshold: 0.20,
            escalation_threshold: 0.004,
            memory_budget: None,
            escalate_unmeasured: true,
            nominal_sizes: NominalSizes::default(),
        }
    }
}

impl DeployPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("absolute_floor", self.absolute_floor),
            ("relative_threshold", self.relative_threshold),
            ("escalation_threshold", self.escalation_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        if let Err(Error::Config(msg)) = self.nominal_sizes.validate() {
            problems.push(msg);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub cluster: usize,
    pub tier: Tier,
    /// MAE of the assigned tier at the planned horizon.
    pub mae: f64,
    /// Set when the assigned tier has no measured row and `mae` was copied from this tier.
    pub estimated_from: Option<Tier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub tier: Tier,
    /// `None` for the shared global model.
    pub cluster: Option<usize>,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub horizon_minutes: u32,
    pub assignments: Vec<Assignment>,
    pub instances: Vec<Instance>,
    pub total_storage: u64,
    /// Unweighted mean over clusters of the assigned MAE.
    pub average_mae: Option<f64>,
    pub models_deployed: usize,
    /// Upgrades undone to meet the memory budget, as (cluster, from, to).
    pub reverted: Vec<(usize, Tier, Tier)>,
    pub policy: DeployPolicy,
}

impl DeploymentPlan {
    pub fn tiers(&self) -> Vec<Tier> {
        self.assignments.iter().map(|a| a.tier).collect()
    }

    pub fn total_storage_mb(&self) -> f64 {
        self.total_storage as f64 / BYTES_PER_MB
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        Ok(serde_json::from_str(raw)?)
    }
}

/// Per-cluster options the planner chooses from.
#[derive(Debug, Clone)]
struct Ladder {
    /// (tier, mae, estimated_from) in ascending tier order; always starts with GM.
    steps: Vec<(Tier, f64, Option<Tier>)>,
    /// Index into `steps` of the current choice.
    level: usize,
}

fn row<'a>(table: &'a PerformanceTable, cluster: usize, tier: Tier, horizon: u32) -> Option<&'a PerformanceRow> {
    table.get(cluster, tier, horizon)
}

fn require<'a>(table: &'a PerformanceTable, cluster: usize, tier: Tier, horizon: u32) -> Result<&'a PerformanceRow> {
    row(table, cluster, tier, horizon).ok_or_else(|| Error::MissingRow {
        cluster,
        tier: format!("{tier} at {horizon} min"),
    })
}

fn materialize(ladders: &[Ladder], horizon: u32, policy: &DeployPolicy, reverted: Vec<(usize, Tier, Tier)>) -> DeploymentPlan {
    let sizes = &policy.nominal_sizes;
    let assignments: Vec<Assignment> = ladders
        .iter()
        .enumerate()
        .map(|(c, l)| {
            let (tier, mae, estimated_from) = l.steps[l.level];
            Assignment { cluster: c, tier, mae, estimated_from }
        })
        .collect();
    let mut instances = Vec::new();
    if assignments.iter().any(|a| a.tier == Tier::Gm) {
        instances.push(Instance { tier: Tier::Gm, cluster: None, bytes: sizes.gm });
    }
    instances.extend(
        assignments
            .iter()
            .filter(|a| a.tier != Tier::Gm)
            .map(|a| Instance { tier: a.tier, cluster: Some(a.cluster), bytes: sizes.of(a.tier) }),
    );
    let maes: Vec<f64> = assignments.iter().map(|a| a.mae).collect();
    DeploymentPlan {
        horizon_minutes: horizon,
        total_storage: instances.iter().map(|i| i.bytes).sum(),
        average_mae: (!maes.is_empty()).then(|| stats::mean(&maes)),
        models_deployed: instances.len(),
        assignments,
        instances,
        reverted,
        policy: *policy,
    }
}

/// Chooses a tier per cluster:
/// GM when its MAE is at most `absolute_floor`; otherwise Lk when it improves on GM by
/// at least `relative_threshold`; then Lkv2 when the Lk MAE is still above
/// `escalation_threshold` and Lkv2 is measured better (or unmeasured and escalation of
/// unmeasured tiers is enabled). Upgrades with the least MAE gain per byte are undone
/// until the plan fits the memory budget.
pub fn plan_deployment(table: &PerformanceTable, policy: &DeployPolicy, horizon_minutes: u32) -> Result<DeploymentPlan> {
    policy.validate()?;
    let k = table.clusters();
    if k == 0 {
        return Err(Error::Empty("performance table"));
    }
    let mut ladders = Vec::with_capacity(k);
    for c in 0..k {
        let gm = require(table, c, Tier::Gm, horizon_minutes)?.mae;
        let mut ladder = Ladder { steps: vec![(Tier::Gm, gm, None)], level: 0 };
        if gm > policy.absolute_floor {
            let lk = require(table, c, Tier::Lk, horizon_minutes)?.mae;
            if improvement(gm, lk)? >= policy.relative_threshold {
                ladder.steps.push((Tier::Lk, lk, None));
                ladder.level = 1;
                if lk > policy.escalation_threshold {
                    match row(table, c, Tier::Lkv2, horizon_minutes) {
                        Some(r) if r.mae < lk => {
                            ladder.steps.push((Tier::Lkv2, r.mae, None));
                            ladder.level = 2;
                        }
                        None if policy.escalate_unmeasured => {
                            ladder.steps.push((Tier::Lkv2, lk, Some(Tier::Lk)));
                            ladder.level = 2;
                        }
                        _ => {}
                    }
                }
            }
        }
        ladders.push(ladder);
    }

    let mut reverted = Vec::new();
    if let Some(budget) = policy.memory_budget {
        loop {
            let plan = materialize(&ladders, horizon_minutes, policy, Vec::new());
            if plan.total_storage <= budget {
                break;
            }
            // Candidate: step one cluster down one level; rank by MAE lost per byte saved.
            let mut best: Option<(f64, usize)> = None;
            for (c, l) in ladders.iter().enumerate() {
                if l.level == 0 {
                    continue;
                }
                let mut trial = ladders.clone();
                trial[c].level -= 1;
                let saved = plan.total_storage as f64 - materialize(&trial, horizon_minutes, policy, Vec::new()).total_storage as f64;
                let lost = l.steps[l.level - 1].1 - l.steps[l.level].1;
                let score = lost / saved.max(f64::MIN_POSITIVE);
                let score = if saved > 0.0 { score } else { f64::INFINITY };
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, c));
                }
            }
            let Some((_, c)) = best else {
                return Err(Error::InfeasibleBudget { budget });
            };
            let l = &mut ladders[c];
            reverted.push((c, l.steps[l.level].0, l.steps[l.level - 1].0));
            l.level -= 1;
        }
    }
    Ok(materialize(&ladders, horizon_minutes, policy, reverted))
}

/// Every cluster on the same tier. Tiers without a measured row borrow the MAE of the
/// nearest measured lower tier.
pub fn plan_uniform(table: &PerformanceTable, tier: Tier, policy: &DeployPolicy, horizon_minutes: u32) -> Result<DeploymentPlan> {
    policy.validate()?;
    let k = table.clusters();
    if k == 0 {
        return Err(Error::Empty("performance table"));
    }
    let mut ladders = Vec::with_capacity(k);
    for c in 0..k {
        let gm = require(table, c, Tier::Gm, horizon_minutes)?.mae;
        let mut steps = vec![(Tier::Gm, gm, None)];
        let mut last = (Tier::Gm, gm);
        for t in Tier::ALL.into_iter().skip(1).filter(|&t| t <= tier) {
            match row(table, c, t, horizon_minutes) {
                Some(r) => {
                    steps.push((t, r.mae, None));
                    last = (t, r.mae);
                }
                None => steps.push((t, last.1, Some(last.0))),
            }
        }
        let level = steps.len() - 1;
        ladders.push(Ladder { steps, level });
    }
    Ok(materialize(&ladders, horizon_minutes, policy, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub models_deployed: usize,
    pub total_storage: u64,
    pub average_mae: Option<f64>,
}

/// Recomputes the plan totals against `table`; fails if an assigned measured tier
/// has no row.
pub fn plan_summary(plan: &DeploymentPlan, table: &PerformanceTable) -> Result<PlanSummary> {
    let mut maes = Vec::with_capacity(plan.assignments.len());
    for a in &plan.assignments {
        let tier = a.estimated_from.unwrap_or(a.tier);
        maes.push(require(table, a.cluster, tier, plan.horizon_minutes)?.mae);
    }
    Ok(PlanSummary {
        models_deployed: plan.instances.len(),
        total_storage: plan.instances.iter().map(|i| i.bytes).sum(),
        average_mae: (!maes.is_empty()).then(|| stats::mean(&maes)),
    })
}

/// Relative storage reduction going from `a_bytes` to `b_bytes`.
pub fn saving_ratio(a_bytes: f64, b_bytes: f64) -> Result<f64> {
    if !(a_bytes > 0.0 && b_bytes > 0.0) {
        return Err(Error::InvalidInput("storage sizes must be positive".into()));
    }
    Ok((a_bytes - b_bytes) / a_bytes)
}

pub fn memory_saving(plan_a: &DeploymentPlan, plan_b: &DeploymentPlan) -> Result<f64> {
    saving_ratio(plan_a.total_storage as f64, plan_b.total_storage as f64)
}

/// Writes `label,models_deployed,storage_mb,average_mae` rows.
pub fn write_cost_summary<W: Write>(writer: W, rows: &[(&str, PlanSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "models_deployed", "storage_mb", "average_mae"])?;
    for (label, s) in rows {
        w.write_record([
            label.to_string(),
            s.models_deployed.to_string(),
            format!("{}", s.total_storage as f64 / BYTES_PER_MB),
            s.average_mae.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("cost summary", e))?;
    Ok(())
}
