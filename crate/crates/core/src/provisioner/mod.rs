//! Hardware and model provisioning: greedy seeding, iterative refinement
//! over the latency-cost space, spot over-provisioning, multi-region quotas,
//! and a bounded-enumeration oracle for small instances.

mod estimator;
mod search;

pub use estimator::{PlanEstimate, PlanEvaluator, WorkloadShape};
pub use search::{
    autoscale_step, exhaustive_oracle, greedy_provision, naive_provision, refine, OracleLimits,
    RefineOptions,
};

use crate::catalog::{Catalog, RegionGraph};
use crate::error::{Error, Result};
use crate::workflow::SloSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which part of a disaggregatable model an instance group serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlanComponent {
    WHOLE,
    DIT_ONLY,
    VAE_ONLY,
}

impl PlanComponent {
    pub fn name(self) -> &'static str {
        match self {
            PlanComponent::WHOLE => "whole",
            PlanComponent::DIT_ONLY => "dit",
            PlanComponent::VAE_ONLY => "vae",
        }
    }
}

/// A set of identical model instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGroup {
    pub model: String,
    pub dag_component: PlanComponent,
    pub sku: String,
    pub region: String,
    /// GPUs per instance; 0.5 packs two lightweight models on one GPU.
    pub gpus_per_instance: f64,
    pub replicas: u32,
    pub spot: bool,
    /// Clock fraction the group runs at.
    pub frequency_fraction: f64,
}

impl InstanceGroup {
    pub fn total_gpus(&self) -> f64 {
        self.gpus_per_instance * self.replicas as f64
    }

    /// Integer parallel degree used for latency estimates (shared fractions
    /// run the model at single-GPU speed).
    pub fn parallel_gpus(&self) -> u32 {
        self.gpus_per_instance.floor().max(1.0) as u32
    }

    pub fn label(&self) -> String {
        format!(
            "{}{}",
            self.model,
            if self.dag_component == PlanComponent::WHOLE {
                String::new()
            } else {
                format!(":{}", self.dag_component.name())
            }
        )
    }
}

/// A complete provisioning decision plus its predicted metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProvisionPlan {
    pub groups: Vec<InstanceGroup>,
    pub objective_value: f64,
    pub predicted_ttff: f64,
    pub predicted_cost: f64,
    pub predicted_energy: f64,
    /// Last-completion time of the evaluated request, seconds after submit.
    pub predicted_makespan: f64,
    pub feasible: bool,
}

impl ProvisionPlan {
    pub fn total_gpus(&self) -> f64 {
        self.groups.iter().map(|g| g.total_gpus()).sum()
    }

    /// GPUs per (region, sku), for quota checks.
    pub fn gpus_by_region_sku(&self) -> BTreeMap<(String, String), f64> {
        let mut out = BTreeMap::new();
        for g in &self.groups {
            *out.entry((g.region.clone(), g.sku.clone())).or_insert(0.0) += g.total_gpus();
        }
        out
    }

    pub fn respects_quotas(&self, regions: &RegionGraph) -> bool {
        self.gpus_by_region_sku()
            .iter()
            .all(|((r, s), g)| *g <= regions.quota(r, s) + 1e-9)
    }

    /// Render an allocation table (model, component, hardware, GPUs).
    pub fn allocation_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>10} {:>8} {:>9} {:>6} {:>6}",
            "model", "sku", "region", "gpus/inst", "replicas", "spot", "gpus"
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>10} {:>8} {:>9} {:>6} {:>6}",
                g.label(),
                g.sku,
                g.region,
                format!("{:g}", g.gpus_per_instance),
                g.replicas,
                if g.spot { "spot" } else { "-" },
                format!("{:g}", g.total_gpus()),
            );
        }
        let _ = writeln!(
            out,
            "total {:g} GPUs | predicted ttff {:.1}s cost ${:.2} energy {:.2} kWh{}",
            self.total_gpus(),
            self.predicted_ttff,
            self.predicted_cost,
            self.predicted_energy / 3.6e6,
            if self.feasible { "" } else { " [INFEASIBLE - closest]" }
        );
        out
    }
}

/// What the optimizer minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveMetric {
    COST_X_TTFF,
    COST,
    TTFF,
    ENERGY,
    ENERGY_X_TTFF,
}

/// Objective plus optional SLO and axis caps (used for Pareto sweeps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub metric: ObjectiveMetric,
    #[serde(default)]
    pub slo: Option<SloSpec>,
    #[serde(default)]
    pub cost_cap: Option<f64>,
    #[serde(default)]
    pub ttff_cap: Option<f64>,
}

impl ObjectiveSpec {
    pub fn new(metric: ObjectiveMetric) -> Self {
        ObjectiveSpec {
            metric,
            slo: None,
            cost_cap: None,
            ttff_cap: None,
        }
    }
}

/// Totally ordered objective outcome. Infeasible plans sort after every
/// feasible plan, ordered among themselves by distance to feasibility, so
/// the search can still return the closest solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// 0 when all constraints hold, otherwise the violation distance.
    pub violation: f64,
    pub scalar: f64,
}

impl ObjectiveValue {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }

    pub fn better_than(&self, other: &ObjectiveValue) -> bool {
        (self.violation, self.scalar) < (other.violation, other.scalar)
    }
}

/// Score a plan's predicted metrics under an objective.
pub fn evaluate_objective(plan: &ProvisionPlan, objective: &ObjectiveSpec) -> ObjectiveValue {
    let scalar = match objective.metric {
        ObjectiveMetric::COST_X_TTFF => plan.predicted_cost * plan.predicted_ttff,
        ObjectiveMetric::COST => plan.predicted_cost,
        ObjectiveMetric::TTFF => plan.predicted_ttff,
        ObjectiveMetric::ENERGY => plan.predicted_energy,
        ObjectiveMetric::ENERGY_X_TTFF => plan.predicted_energy * plan.predicted_ttff,
    };
    let mut violation = 0.0;
    if !plan.feasible {
        violation += 1e12;
    }
    if let Some(slo) = &objective.slo {
        match slo.mode {
            crate::workflow::SloMode::REALTIME => {
                let target = slo.effective_ttff();
                if plan.predicted_ttff > target {
                    violation += plan.predicted_ttff - target;
                }
            }
            crate::workflow::SloMode::DEADLINE => {
                if plan.predicted_makespan > slo.absolute_deadline {
                    violation += plan.predicted_makespan - slo.absolute_deadline;
                }
            }
            crate::workflow::SloMode::BATCH => {}
        }
    }
    if let Some(cap) = objective.cost_cap {
        if plan.predicted_cost > cap {
            violation += (plan.predicted_cost - cap) / cap.max(1e-9) * 1e3;
        }
    }
    if let Some(cap) = objective.ttff_cap {
        if plan.predicted_ttff > cap {
            violation += (plan.predicted_ttff - cap) / cap.max(1e-9) * 1e3;
        }
    }
    ObjectiveValue { violation, scalar }
}

/// Per-hour eviction probability per "region/sku".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvictionRisk {
    pub hourly: BTreeMap<String, f64>,
}

impl EvictionRisk {
    pub fn uniform(rate: f64) -> Self {
        let mut r = EvictionRisk::default();
        r.hourly.insert("*".into(), rate);
        r
    }

    pub fn rate(&self, region: &str, sku: &str) -> f64 {
        self.hourly
            .get(&format!("{region}/{sku}"))
            .or_else(|| self.hourly.get("*"))
            .copied()
            .unwrap_or(0.0)
    }

    /// Probability of at least one eviction over `hours` at the hourly rate.
    pub fn over_horizon(&self, region: &str, sku: &str, hours: f64) -> f64 {
        let r = self.rate(region, sku).clamp(0.0, 0.999_999);
        1.0 - (1.0 - r).powf(hours.max(0.0))
    }
}

/// Scale spot replicas up in proportion to the eviction risk over the plan's
/// horizon. Reserved groups are untouched and replicas never shrink.
pub fn spot_overprovision(
    plan: &ProvisionPlan,
    risk: &EvictionRisk,
    catalog: &Catalog,
    regions: &RegionGraph,
    evaluator: &PlanEvaluator,
) -> Result<ProvisionPlan> {
    let hours = (plan.predicted_makespan / 3600.0).max(0.0);
    let mut out = plan.clone();
    for g in &mut out.groups {
        if !g.spot {
            continue;
        }
        let risk_h = risk.over_horizon(&g.region, &g.sku, hours);
        if risk_h > 0.0 {
            g.replicas = ((g.replicas as f64 / (1.0 - risk_h)).ceil()) as u32;
        }
    }
    let est = evaluator.evaluate(catalog, regions, &out.groups);
    est.write_into(&mut out);
    Ok(out)
}

/// Whether a model is light enough to share one GPU with another (two per
/// GPU at half a GPU each).
pub fn can_share_gpu(profile: &crate::catalog::ModelProfile) -> bool {
    use crate::catalog::{FlashAttentionTier, TaskClass};
    profile.mem_footprint <= 10.0
        && matches!(profile.task_class, TaskClass::TTS | TaskClass::I2I)
        && profile.min_attention_tier == FlashAttentionTier::NONE
}

/// Quota remaining after subtracting a plan's usage.
pub fn remaining_quota(plan: &ProvisionPlan, regions: &RegionGraph, region: &str, sku: &str) -> f64 {
    let used = plan
        .groups
        .iter()
        .filter(|g| g.region == region && g.sku == sku)
        .map(|g| g.total_gpus())
        .sum::<f64>();
    regions.quota(region, sku) - used
}

/// Error helper: the stages of a dag that no catalog model can serve.
pub fn uncovered_classes(
    catalog: &Catalog,
    dag: &crate::workflow::WorkflowDag,
) -> Vec<crate::catalog::TaskClass> {
    let mut needed: Vec<crate::catalog::TaskClass> = Vec::new();
    for n in &dag.nodes {
        if let Some(c) = n.stage.task_class() {
            if !needed.contains(&c) {
                needed.push(c);
            }
        }
    }
    needed
        .into_iter()
        .filter(|c| catalog.models_of_class(*c).is_empty())
        .collect()
}

pub use self::ObjectiveMetric as Metric;

#[allow(unused)]
fn _doc_anchor() {}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(cost: f64, ttff: f64, feasible: bool) -> ProvisionPlan {
        ProvisionPlan {
            predicted_cost: cost,
            predicted_ttff: ttff,
            predicted_energy: 1.0,
            predicted_makespan: ttff,
            feasible,
            ..Default::default()
        }
    }

    #[test]
    fn cost_times_ttff_is_the_product() {
        let v = evaluate_objective(&plan(45.0, 22.0, true), &ObjectiveSpec::new(ObjectiveMetric::COST_X_TTFF));
        assert_eq!(v.scalar, 990.0);
        assert!(v.feasible());
        let v0 = evaluate_objective(&plan(45.0, 0.0, true), &ObjectiveSpec::new(ObjectiveMetric::COST_X_TTFF));
        assert_eq!(v0.scalar, 0.0);
    }

    #[test]
    fn slo_violations_order_by_distance() {
        let obj = ObjectiveSpec {
            slo: Some(crate::workflow::SloSpec::realtime(10.0)),
            ..ObjectiveSpec::new(ObjectiveMetric::COST)
        };
        let near = evaluate_objective(&plan(100.0, 12.0, true), &obj);
        let far = evaluate_objective(&plan(1.0, 50.0, true), &obj);
        let ok = evaluate_objective(&plan(500.0, 9.0, true), &obj);
        assert!(ok.better_than(&near), "feasible beats any violator");
        assert!(near.better_than(&far), "violators order by distance");
    }

    #[test]
    fn horizon_risk_compounds_hourly() {
        let r = EvictionRisk::uniform(0.25);
        assert!((r.over_horizon("x", "y", 1.0) - 0.25).abs() < 1e-12);
        let two = r.over_horizon("x", "y", 2.0);
        assert!((two - (1.0 - 0.75f64 * 0.75)).abs() < 1e-12);
        assert_eq!(EvictionRisk::uniform(0.0).over_horizon("x", "y", 5.0), 0.0);
    }
}
