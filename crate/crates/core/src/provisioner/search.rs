//! Plan construction and refinement search.
//!
//! Greedy seeding assigns each required model one instance on the cheapest
//! permitted hardware; refinement then hill-climbs over the move classes
//! (replica count, GPU type, model choice, parallel width, spot, region,
//! disaggregation), evaluating every candidate with the dispatch estimator
//! and keeping the best improvement. Heuristics focus the candidate set on
//! the bottleneck and most expensive groups; when latency is the problem the
//! search scales out and tries faster GPUs, when cost is the problem it
//! switches to spot and scales in.

use super::estimator::{PlanEstimate, PlanEvaluator};
use super::{
    can_share_gpu, evaluate_objective, InstanceGroup, ObjectiveSpec, ObjectiveValue,
    PlanComponent, ProvisionPlan,
};
use crate::catalog::{Catalog, HardwareSku, ModelProfile, RegionGraph, TaskClass};
use crate::error::{Error, Result};
use crate::workflow::WorkflowDag;

/// Search knobs for [`refine`].
#[derive(Debug, Clone)]
pub struct RefineOptions {
    /// Maximum accepted moves.
    pub budget: u32,
    pub enable_disagg: bool,
    pub enable_spot: bool,
    /// Restrict hardware choices (ablations); `None` allows every SKU.
    pub allowed_skus: Option<Vec<String>>,
    pub max_gpus_per_instance: u32,
    /// Groups examined per iteration before falling back to a full scan.
    pub focus_groups: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            budget: 64,
            enable_disagg: true,
            enable_spot: true,
            allowed_skus: None,
            max_gpus_per_instance: 64,
            focus_groups: 4,
        }
    }
}

fn sku_allowed(opts: &RefineOptions, sku: &str) -> bool {
    opts.allowed_skus
        .as_ref()
        .map(|v| v.iter().any(|s| s == sku))
        .unwrap_or(true)
}

/// Legal parallel widths for a model on a SKU, smallest first.
fn legal_widths(model: &ModelProfile, max: u32) -> Vec<u32> {
    (1..=max.min(model.attention_heads))
        .filter(|g| model.gpus_compatible(*g))
        .collect()
}

fn mem_fits(model: &ModelProfile, sku: &HardwareSku, gpus: f64) -> bool {
    model.mem_footprint <= sku.mem_per_gpu * gpus.max(0.5) + 1e-9
}

fn mk_plan(
    groups: Vec<InstanceGroup>,
    est: &PlanEstimate,
    objective: &ObjectiveSpec,
) -> (ProvisionPlan, ObjectiveValue) {
    let mut plan = ProvisionPlan {
        groups,
        ..Default::default()
    };
    est.write_into(&mut plan);
    let val = evaluate_objective(&plan, objective);
    plan.objective_value = val.scalar;
    (plan, val)
}

/// Deterministic preference among equal-objective plans: fewer GPUs, fewer
/// regions, then lexicographic SKU usage.
fn tie_break_key(plan: &ProvisionPlan) -> (u64, usize, String) {
    let gpus = (plan.total_gpus() * 2.0).round() as u64;
    let mut regions: Vec<&str> = plan.groups.iter().map(|g| g.region.as_str()).collect();
    regions.sort_unstable();
    regions.dedup();
    let mut skus: Vec<&str> = plan.groups.iter().map(|g| g.sku.as_str()).collect();
    skus.sort_unstable();
    (gpus, regions.len(), skus.join(","))
}

/// Initial provisioning: one single-GPU instance per required model on the
/// cheapest permitted SKU; lightweight models take half a GPU so two of them
/// share one device.
pub fn greedy_provision(
    dag: &WorkflowDag,
    catalog: &Catalog,
    regions: &RegionGraph,
    baseline_sku: Option<&str>,
) -> Result<ProvisionPlan> {
    let classes = PlanEvaluator::required_classes(dag);
    let binding = catalog.default_binding();
    let mut groups: Vec<InstanceGroup> = Vec::new();
    let mut used: std::collections::BTreeMap<(String, String), f64> = Default::default();

    for class in classes {
        let model = binding
            .get(&class)
            .and_then(|n| catalog.model(n).ok())
            .or_else(|| catalog.models_of_class(class).into_iter().next())
            .ok_or_else(|| Error::UncoverableStage(format!("{class:?}")))?;
        let gpus = if can_share_gpu(model) { 0.5 } else { 1.0 };

        // Cheapest viable (sku, region) by per-GPU-hour reserved price.
        let mut best: Option<(f64, &HardwareSku, &str)> = None;
        for sku in &catalog.skus {
            if let Some(forced) = baseline_sku {
                if sku.name != forced && !(sku.is_cpu && false) {
                    continue;
                }
            }
            if !sku.supports(model) || !mem_fits(model, sku, gpus) {
                continue;
            }
            for region in &regions.regions {
                let key = (region.clone(), sku.name.clone());
                let left = regions.quota(region, &sku.name) - used.get(&key).copied().unwrap_or(0.0);
                if left + 1e-9 < gpus {
                    continue;
                }
                let price = sku.price_per_gpu_hour(false) * gpus.max(1.0);
                let better = match best {
                    None => true,
                    Some((p, _, _)) => price < p - 1e-12,
                };
                if better {
                    best = Some((price, sku, region));
                }
            }
        }
        let (_, sku, region) = best.ok_or_else(|| {
            Error::UncoverableStage(format!("{class:?} ({}, no permitted hardware)", model.name))
        })?;
        *used.entry((region.to_string(), sku.name.clone())).or_insert(0.0) += gpus;
        groups.push(InstanceGroup {
            model: model.name.clone(),
            dag_component: PlanComponent::WHOLE,
            sku: sku.name.clone(),
            region: region.to_string(),
            gpus_per_instance: gpus,
            replicas: 1,
            spot: false,
            frequency_fraction: 1.0,
        });
    }

    let evaluator = PlanEvaluator::new(dag);
    let est = evaluator.evaluate(catalog, regions, &groups);
    let mut plan = ProvisionPlan {
        groups,
        ..Default::default()
    };
    est.write_into(&mut plan);
    // A plan with nothing to serve is trivially feasible.
    if plan.groups.is_empty() {
        plan.feasible = true;
        plan.predicted_cost = 0.0;
        plan.predicted_ttff = 0.0;
        plan.predicted_energy = 0.0;
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq)]
enum Move {
    IncReplicas(usize, u32),
    DecReplicas(usize),
    IncGpus(usize),
    DecGpus(usize),
    SwitchSku(usize, String),
    SwitchModel(usize, String),
    ToggleSpot(usize),
    SwitchRegion(usize, String),
    Disaggregate(usize),
    Merge(usize),
}

fn paired_indices(groups: &[InstanceGroup], gi: usize) -> Vec<usize> {
    let g = &groups[gi];
    if g.dag_component == PlanComponent::WHOLE {
        return vec![gi];
    }
    groups
        .iter()
        .enumerate()
        .filter(|(_, o)| o.model == g.model && o.dag_component != PlanComponent::WHOLE)
        .map(|(i, _)| i)
        .collect()
}

fn apply_move(
    groups: &[InstanceGroup],
    mv: &Move,
    catalog: &Catalog,
    regions: &RegionGraph,
    opts: &RefineOptions,
) -> Option<Vec<InstanceGroup>> {
    let mut out = groups.to_vec();
    match mv {
        Move::IncReplicas(gi, step) => {
            out[*gi].replicas = out[*gi].replicas.saturating_add(*step);
        }
        Move::DecReplicas(gi) => {
            if out[*gi].replicas <= 1 {
                return None;
            }
            out[*gi].replicas -= 1;
        }
        Move::IncGpus(gi) => {
            let g = &out[*gi];
            let model = catalog.model(&g.model).ok()?;
            let sku = catalog.sku(&g.sku).ok()?;
            if g.gpus_per_instance < 1.0 {
                out[*gi].gpus_per_instance = 1.0;
            } else {
                let widths = legal_widths(model, opts.max_gpus_per_instance);
                let next = widths
                    .into_iter()
                    .find(|w| (*w as f64) > g.gpus_per_instance + 1e-9)?;
                if !mem_fits(model, sku, next as f64) {
                    return None;
                }
                out[*gi].gpus_per_instance = next as f64;
            }
        }
        Move::DecGpus(gi) => {
            let g = &out[*gi];
            let model = catalog.model(&g.model).ok()?;
            if g.gpus_per_instance <= 1.0 {
                if g.gpus_per_instance <= 0.5 || !can_share_gpu(model) {
                    return None;
                }
                out[*gi].gpus_per_instance = 0.5;
            } else {
                let widths = legal_widths(model, opts.max_gpus_per_instance);
                let prev = widths
                    .into_iter()
                    .rev()
                    .find(|w| (*w as f64) < g.gpus_per_instance - 1e-9)?;
                let sku = catalog.sku(&g.sku).ok()?;
                if !mem_fits(model, sku, prev as f64) {
                    return None;
                }
                out[*gi].gpus_per_instance = prev as f64;
            }
        }
        Move::SwitchSku(gi, sku_name) => {
            if !sku_allowed(opts, sku_name) {
                return None;
            }
            let model = catalog.model(&out[*gi].model).ok()?;
            let sku = catalog.sku(sku_name).ok()?;
            if !sku.supports(model) || !mem_fits(model, sku, out[*gi].gpus_per_instance) {
                return None;
            }
            // Follow the SKU to a region that actually stocks it.
            let region = if regions.quota(&out[*gi].region, sku_name) > 0.0 {
                out[*gi].region.clone()
            } else {
                regions
                    .regions
                    .iter()
                    .find(|r| regions.quota(r, sku_name) > 0.0)?
                    .clone()
            };
            for pi in paired_indices(groups, *gi) {
                out[pi].region = region.clone();
            }
            out[*gi].sku = sku_name.clone();
            out[*gi].region = region;
        }
        Move::SwitchModel(gi, model_name) => {
            let new_model = catalog.model(model_name).ok()?;
            let old_model = catalog.model(&out[*gi].model).ok()?;
            if new_model.task_class != old_model.task_class || model_name == &out[*gi].model {
                return None;
            }
            if out[*gi].dag_component != PlanComponent::WHOLE && !new_model.disaggregatable {
                return None;
            }
            let sku = catalog.sku(&out[*gi].sku).ok()?;
            if !sku.supports(new_model) {
                return None;
            }
            let gpus = out[*gi].gpus_per_instance;
            let gpus = if gpus < 1.0 && !can_share_gpu(new_model) { 1.0 } else { gpus };
            if !mem_fits(new_model, sku, gpus) || !new_model.gpus_compatible(gpus.max(1.0) as u32) {
                return None;
            }
            out[*gi].model = model_name.clone();
            out[*gi].gpus_per_instance = gpus;
        }
        Move::ToggleSpot(gi) => {
            if !opts.enable_spot && !out[*gi].spot {
                return None;
            }
            out[*gi].spot = !out[*gi].spot;
        }
        Move::SwitchRegion(gi, region) => {
            if regions.quota(region, &out[*gi].sku) <= 0.0 || &out[*gi].region == region {
                return None;
            }
            for pi in paired_indices(groups, *gi) {
                // Keep disaggregated components co-located.
                if regions.quota(region, &out[pi].sku) <= 0.0 {
                    return None;
                }
                out[pi].region = region.clone();
            }
            out[*gi].region = region.clone();
        }
        Move::Disaggregate(gi) => {
            if !opts.enable_disagg {
                return None;
            }
            let g = out[*gi].clone();
            let model = catalog.model(&g.model).ok()?;
            if g.dag_component != PlanComponent::WHOLE || !model.disaggregatable {
                return None;
            }
            out[*gi].dag_component = PlanComponent::DIT_ONLY;
            out.push(InstanceGroup {
                dag_component: PlanComponent::VAE_ONLY,
                gpus_per_instance: 1.0,
                replicas: 1,
                ..g
            });
        }
        Move::Merge(gi) => {
            let g = out[*gi].clone();
            if g.dag_component != PlanComponent::DIT_ONLY {
                return None;
            }
            let vae = out
                .iter()
                .position(|o| o.model == g.model && o.dag_component == PlanComponent::VAE_ONLY)?;
            out[*gi].dag_component = PlanComponent::WHOLE;
            out.remove(vae);
        }
    }
    // Global legality.
    let plan = ProvisionPlan {
        groups: out.clone(),
        ..Default::default()
    };
    if !plan.respects_quotas(regions) {
        return None;
    }
    for g in &out {
        if g.replicas == 0 {
            return None;
        }
    }
    // Disaggregated components of one model stay co-located.
    for g in &out {
        if g.dag_component == PlanComponent::DIT_ONLY {
            if let Some(v) = out
                .iter()
                .find(|o| o.model == g.model && o.dag_component == PlanComponent::VAE_ONLY)
            {
                if v.region != g.region {
                    return None;
                }
            }
        }
    }
    Some(out)
}

fn gen_moves(
    groups: &[InstanceGroup],
    est: &PlanEstimate,
    catalog: &Catalog,
    regions: &RegionGraph,
    opts: &RefineOptions,
    focus: &[usize],
    streak: Option<(usize, u32)>,
) -> Vec<Move> {
    let mut moves = Vec::with_capacity(focus.len() * 12);
    for &gi in focus {
        let g = &groups[gi];
        moves.push(Move::IncReplicas(gi, 1));
        if let Some((sg, step)) = streak {
            if sg == gi && step > 1 {
                moves.push(Move::IncReplicas(gi, step));
            }
        }
        moves.push(Move::DecReplicas(gi));
        moves.push(Move::IncGpus(gi));
        moves.push(Move::DecGpus(gi));
        for sku in &catalog.skus {
            if sku.name != g.sku && sku_allowed(opts, &sku.name) {
                moves.push(Move::SwitchSku(gi, sku.name.clone()));
            }
        }
        if let Ok(model) = catalog.model(&g.model) {
            for m in catalog.models_of_class(model.task_class) {
                if m.name != g.model {
                    moves.push(Move::SwitchModel(gi, m.name.clone()));
                }
            }
        }
        moves.push(Move::ToggleSpot(gi));
        for region in &regions.regions {
            if region != &g.region {
                moves.push(Move::SwitchRegion(gi, region.clone()));
            }
        }
        moves.push(Move::Disaggregate(gi));
        moves.push(Move::Merge(gi));
    }
    let _ = est;
    moves
}

/// Deterministic best-improvement hill climbing over the refinement moves.
/// Never returns a plan worse than the input under the objective.
pub fn refine(
    plan: &ProvisionPlan,
    catalog: &Catalog,
    regions: &RegionGraph,
    objective: &ObjectiveSpec,
    evaluator: &PlanEvaluator,
    opts: &RefineOptions,
) -> ProvisionPlan {
    if plan.groups.is_empty() {
        return plan.clone();
    }
    let est = evaluator.evaluate(catalog, regions, &plan.groups);
    let (mut current, mut current_val) = mk_plan(plan.groups.clone(), &est, objective);
    let mut current_est = est;
    let mut streak: Option<(usize, u32)> = None;

    for _ in 0..opts.budget {
        let focus = pick_focus(&current, &current_est, opts);
        let mut improved = try_moves(
            &current,
            &current_val,
            &current_est,
            catalog,
            regions,
            objective,
            evaluator,
            opts,
            &focus,
            streak,
        );
        if improved.is_none() && focus.len() < current.groups.len() {
            // Focused scan found nothing; widen to every group once.
            let all: Vec<usize> = (0..current.groups.len()).collect();
            improved = try_moves(
                &current,
                &current_val,
                &current_est,
                catalog,
                regions,
                objective,
                evaluator,
                opts,
                &all,
                streak,
            );
        }
        match improved {
            Some((mv, next, next_val, next_est)) => {
                streak = match (&mv, streak) {
                    (Move::IncReplicas(gi, step), Some((sg, _))) if *gi == sg => {
                        Some((*gi, (step * 2).min(64)))
                    }
                    (Move::IncReplicas(gi, _), _) => Some((*gi, 2)),
                    _ => None,
                };
                current = next;
                current_val = next_val;
                current_est = next_est;
            }
            None => break,
        }
    }
    current
}

fn pick_focus(plan: &ProvisionPlan, est: &PlanEstimate, opts: &RefineOptions) -> Vec<usize> {
    let n = plan.groups.len();
    if opts.focus_groups == 0 || n <= opts.focus_groups {
        return (0..n).collect();
    }
    let mut focus: Vec<usize> = Vec::new();
    let mut push = |i: usize, focus: &mut Vec<usize>| {
        if !focus.contains(&i) {
            focus.push(i);
        }
    };
    // Bottleneck by busy time per GPU; then the most expensive group; then
    // the least utilized one (scale-in candidate).
    let mut by_load: Vec<usize> = (0..n).collect();
    by_load.sort_by(|&a, &b| {
        let la = est.per_group_busy.get(a).unwrap_or(&0.0) / plan.groups[a].total_gpus().max(1e-9);
        let lb = est.per_group_busy.get(b).unwrap_or(&0.0) / plan.groups[b].total_gpus().max(1e-9);
        lb.total_cmp(&la)
    });
    push(by_load[0], &mut focus);
    if n > 1 {
        push(by_load[1], &mut focus);
    }
    push(by_load[n - 1], &mut focus);
    let most_expensive = (0..n)
        .max_by(|&a, &b| {
            let ca = plan.groups[a].total_gpus();
            let cb = plan.groups[b].total_gpus();
            ca.total_cmp(&cb)
        })
        .unwrap_or(0);
    push(most_expensive, &mut focus);
    focus.truncate(opts.focus_groups.max(1));
    focus
}

#[allow(clippy::too_many_arguments)]
fn try_moves(
    current: &ProvisionPlan,
    current_val: &ObjectiveValue,
    current_est: &PlanEstimate,
    catalog: &Catalog,
    regions: &RegionGraph,
    objective: &ObjectiveSpec,
    evaluator: &PlanEvaluator,
    opts: &RefineOptions,
    focus: &[usize],
    streak: Option<(usize, u32)>,
) -> Option<(Move, ProvisionPlan, ObjectiveValue, PlanEstimate)> {
    let moves = gen_moves(
        &current.groups,
        current_est,
        catalog,
        regions,
        opts,
        focus,
        streak,
    );
    let mut best: Option<(Move, ProvisionPlan, ObjectiveValue, PlanEstimate)> = None;
    for mv in moves {
        let groups = match apply_move(&current.groups, &mv, catalog, regions, opts) {
            Some(g) => g,
            None => continue,
        };
        let est = evaluator.evaluate(catalog, regions, &groups);
        let (cand, val) = mk_plan(groups, &est, objective);
        if !val.better_than(current_val) {
            continue;
        }
        let take = match &best {
            None => true,
            Some((_, bplan, bval, _)) => {
                val.better_than(bval)
                    || (!bval.better_than(&val) && tie_break_key(&cand) < tie_break_key(bplan))
            }
        };
        if take {
            best = Some((mv, cand, val, est));
        }
    }
    best
}

/// Enumeration bounds for the oracle.
#[derive(Debug, Clone)]
pub struct OracleLimits {
    pub max_models: usize,
    pub max_skus: usize,
    pub max_gpus: u32,
    pub max_replicas: u32,
    pub max_candidates: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_models: 2,
            max_skus: 2,
            max_gpus: 8,
            max_replicas: 4,
            max_candidates: 1_000_000,
        }
    }
}

/// Globally optimal plan (under the same dispatch estimator) by bounded
/// exhaustive enumeration over per-class options.
pub fn exhaustive_oracle(
    dag: &WorkflowDag,
    catalog: &Catalog,
    regions: &RegionGraph,
    objective: &ObjectiveSpec,
    limits: &OracleLimits,
    evaluator: &PlanEvaluator,
) -> Result<ProvisionPlan> {
    let classes = PlanEvaluator::required_classes(dag);
    if classes.is_empty() {
        return Ok(ProvisionPlan {
            feasible: true,
            ..Default::default()
        });
    }

    // Per-class candidate groups.
    let mut options: Vec<Vec<InstanceGroup>> = Vec::new();
    for class in &classes {
        let mut opts_c = Vec::new();
        let models: Vec<&ModelProfile> = catalog
            .models_of_class(*class)
            .into_iter()
            .take(limits.max_models)
            .collect();
        for model in &models {
            let mut sku_count = 0;
            for sku in &catalog.skus {
                if !sku.supports(model) {
                    continue;
                }
                if sku_count >= limits.max_skus {
                    break;
                }
                let mut any_region = false;
                for region in &regions.regions {
                    if regions.quota(region, &sku.name) <= 0.0 {
                        continue;
                    }
                    any_region = true;
                    let mut widths: Vec<f64> = Vec::new();
                    if can_share_gpu(model) {
                        widths.push(0.5);
                    }
                    widths.extend(
                        legal_widths(model, limits.max_gpus)
                            .into_iter()
                            .map(|w| w as f64),
                    );
                    for gpus in widths {
                        if !mem_fits(model, sku, gpus) {
                            continue;
                        }
                        for replicas in 1..=limits.max_replicas {
                            if gpus * replicas as f64 > limits.max_gpus as f64 + 1e-9 {
                                break;
                            }
                            for spot in [false, true] {
                                opts_c.push(InstanceGroup {
                                    model: model.name.clone(),
                                    dag_component: PlanComponent::WHOLE,
                                    sku: sku.name.clone(),
                                    region: region.clone(),
                                    gpus_per_instance: gpus,
                                    replicas,
                                    spot,
                                    frequency_fraction: 1.0,
                                });
                            }
                        }
                    }
                    break; // one region per SKU keeps the space bounded
                }
                if any_region {
                    sku_count += 1;
                }
            }
        }
        if opts_c.is_empty() {
            return Err(Error::UncoverableStage(format!("{class:?}")));
        }
        options.push(opts_c);
    }

    let candidates: u64 = options.iter().map(|o| o.len() as u64).product();
    if candidates > limits.max_candidates {
        return Err(Error::InstanceTooLarge {
            candidates,
            limit: limits.max_candidates,
        });
    }

    // Odometer over the cartesian product.
    let mut idx = vec![0usize; options.len()];
    let mut best: Option<(ProvisionPlan, ObjectiveValue)> = None;
    loop {
        let groups: Vec<InstanceGroup> = idx
            .iter()
            .enumerate()
            .map(|(c, &i)| options[c][i].clone())
            .collect();
        let plan_probe = ProvisionPlan {
            groups: groups.clone(),
            ..Default::default()
        };
        if plan_probe.respects_quotas(regions) {
            let est = evaluator.evaluate(catalog, regions, &groups);
            let (cand, val) = mk_plan(groups, &est, objective);
            let take = match &best {
                None => true,
                Some((bplan, bval)) => {
                    val.better_than(bval)
                        || (!bval.better_than(&val) && tie_break_key(&cand) < tie_break_key(bplan))
                }
            };
            if take {
                best = Some((cand, val));
            }
        }
        // advance odometer
        let mut c = 0;
        loop {
            idx[c] += 1;
            if idx[c] < options[c].len() {
                break;
            }
            idx[c] = 0;
            c += 1;
            if c == options.len() {
                return best
                    .map(|(p, _)| p)
                    .ok_or_else(|| Error::InfeasiblePlan("no plan within quotas".into()));
            }
        }
    }
}

/// One auto-scaling step: re-run the optimization from the current
/// configuration, charging provisioning lead and model load/warmup time to
/// any capacity that is not already running.
pub fn autoscale_step(
    current: &ProvisionPlan,
    demand_qpm: f64,
    dag: &WorkflowDag,
    catalog: &Catalog,
    regions: &RegionGraph,
    objective: &ObjectiveSpec,
    opts: &RefineOptions,
) -> ProvisionPlan {
    let evaluator = PlanEvaluator {
        dag,
        workload: super::WorkloadShape::poisson(demand_qpm),
        warm_start: false,
        existing: Some(&current.groups),
    };
    refine(current, catalog, regions, objective, &evaluator, opts)
}

/// The out-of-the-box baseline: every model at its maximum effective
/// parallelism on one on-demand SKU in one region, GPUs divided in
/// proportion to runtime share, no disaggregation.
pub fn naive_provision(
    dag: &WorkflowDag,
    catalog: &Catalog,
    regions: &RegionGraph,
    sku_name: &str,
) -> Result<ProvisionPlan> {
    let sku = catalog.sku(sku_name)?;
    let region = regions
        .regions
        .iter()
        .max_by(|a, b| {
            regions
                .quota(a, sku_name)
                .total_cmp(&regions.quota(b, sku_name))
        })
        .ok_or_else(|| Error::config("no regions"))?
        .clone();
    let budget = regions.quota(&region, sku_name);
    if budget < 1.0 {
        return Err(Error::UncoverableStage(format!("no {sku_name} quota")));
    }

    let classes = PlanEvaluator::required_classes(dag);
    let binding = catalog.default_binding();
    let mut groups: Vec<InstanceGroup> = Vec::new();
    for class in &classes {
        let model = binding
            .get(class)
            .and_then(|n| catalog.model(n).ok())
            .ok_or_else(|| Error::UncoverableStage(format!("{class:?}")))?;
        if !sku.supports(model) {
            return Err(Error::UncoverableStage(format!(
                "{} unsupported on {sku_name}",
                model.name
            )));
        }
        // Maximum effective parallelism: the widest legal width within one
        // server where the speedup curve still improves.
        let widths = legal_widths(model, sku.gpus_per_server);
        let mut width = 1u32;
        for w in widths {
            if model.parallel_speedup(w) > model.parallel_speedup(width) + 1e-9
                && mem_fits(model, sku, w as f64)
            {
                width = w;
            }
        }
        groups.push(InstanceGroup {
            model: model.name.clone(),
            dag_component: PlanComponent::WHOLE,
            sku: sku.name.clone(),
            region: region.clone(),
            gpus_per_instance: width as f64,
            replicas: 1,
            spot: false,
            frequency_fraction: 1.0,
        });
    }

    // Share the remaining GPU budget in proportion to per-model busy time.
    let evaluator = PlanEvaluator::new(dag);
    let probe = evaluator.evaluate(catalog, regions, &groups);
    let total_busy: f64 = probe.per_group_busy.iter().sum();
    if total_busy > 0.0 {
        let used: f64 = groups.iter().map(|g| g.total_gpus()).sum();
        let spare = (budget - used).max(0.0);
        let mut adds: Vec<(usize, f64)> = probe
            .per_group_busy
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b / total_busy * spare))
            .collect();
        adds.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut left = spare;
        for (gi, want) in adds {
            let per = groups[gi].gpus_per_instance;
            let extra = (want / per).floor().min((left / per).floor()).max(0.0) as u32;
            groups[gi].replicas += extra;
            left -= extra as f64 * per;
        }
    }

    let est = evaluator.evaluate(catalog, regions, &groups);
    let mut plan = ProvisionPlan {
        groups,
        ..Default::default()
    };
    est.write_into(&mut plan);
    Ok(plan)
}
