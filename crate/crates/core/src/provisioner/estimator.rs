//! Static greedy-dispatch estimator.
//!
//! The provisioning search evaluates every candidate plan by replaying the
//! request DAG through a deterministic list scheduler: ready nodes are
//! dispatched in deadline order to the compatible instance with the best
//! expected completion (cheapest one that still meets the node's deadline,
//! otherwise the fastest). The same policy drives the event engine, so the
//! estimate tracks what the simulation will do without paying for a full
//! event loop.

use super::{InstanceGroup, PlanComponent, ProvisionPlan};
use crate::catalog::{Catalog, FrequencySetting, RegionGraph, StageSet, TaskClass};
use crate::error::Result;
use crate::workflow::{
    frame_deadline, ttff_eff, SloMode, SloSpec, Stage, WorkflowDag,
};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};

/// Offered load the plan must sustain.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadShape {
    /// Queries per minute; 0 evaluates a single request.
    pub qpm: f64,
    /// SLO mix as (weight, slo); empty means the DAG's own SLO.
    pub mix: Vec<(f64, SloSpec)>,
    /// How many request-durations a no-SLO request may be spread over.
    pub batch_window_factor: f64,
}

impl Default for WorkloadShape {
    fn default() -> Self {
        WorkloadShape {
            qpm: 0.0,
            mix: Vec::new(),
            batch_window_factor: 3.0,
        }
    }
}

impl WorkloadShape {
    pub fn single() -> Self {
        WorkloadShape::default()
    }

    pub fn poisson(qpm: f64) -> Self {
        WorkloadShape {
            qpm,
            ..WorkloadShape::default()
        }
    }
}

/// Outcome of evaluating one candidate plan.
#[derive(Debug, Clone, Default)]
pub struct PlanEstimate {
    pub covered: bool,
    pub slo_ok: bool,
    pub capacity_ok: bool,
    pub ttff: f64,
    pub ttff_eff: f64,
    pub makespan: f64,
    /// Dollars for the single request (includes load/warmup/idle billing).
    pub cost: f64,
    /// Dollars per hour of keeping the fleet up.
    pub hourly_cost: f64,
    pub energy_joules: f64,
    pub per_group_busy: Vec<f64>,
    pub per_group_first_done: Vec<f64>,
    pub deadline_misses: u32,
}

impl PlanEstimate {
    pub fn feasible(&self) -> bool {
        self.covered && self.slo_ok && self.capacity_ok
    }

    pub fn write_into(&self, plan: &mut ProvisionPlan) {
        plan.predicted_ttff = self.ttff_eff;
        plan.predicted_cost = if self.hourly_cost > 0.0 && self.is_rate_based() {
            self.hourly_cost
        } else {
            self.cost
        };
        plan.predicted_energy = self.energy_joules;
        plan.predicted_makespan = self.makespan;
        plan.feasible = self.feasible();
    }

    fn is_rate_based(&self) -> bool {
        // hourly_cost is only populated for rate workloads
        self.hourly_cost > 0.0
    }
}

#[derive(PartialEq)]
struct ReadyEntry {
    deadline: f64,
    id: u32,
}

impl Eq for ReadyEntry {}

impl PartialOrd for ReadyEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ReadyEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (deadline, id)
        other
            .deadline
            .total_cmp(&self.deadline)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct GroupState<'a> {
    group: &'a InstanceGroup,
    model_idx: usize,
    sku_idx: usize,
    region_idx: usize,
    avail: Vec<f64>,
    busy_gpu_seconds: f64,
    first_done: f64,
    hourly: f64,
    freq: FrequencySetting,
}

/// Evaluates candidate plans against one request DAG and workload shape.
pub struct PlanEvaluator<'a> {
    pub dag: &'a WorkflowDag,
    pub workload: WorkloadShape,
    /// Instances are warm when the request arrives.
    pub warm_start: bool,
    /// Groups already running (autoscaling): matching replicas skip bringup.
    pub existing: Option<&'a [InstanceGroup]>,
}

impl<'a> PlanEvaluator<'a> {
    pub fn new(dag: &'a WorkflowDag) -> Self {
        PlanEvaluator {
            dag,
            workload: WorkloadShape::single(),
            warm_start: true,
            existing: None,
        }
    }

    /// Classes the DAG needs served.
    pub fn required_classes(dag: &WorkflowDag) -> Vec<TaskClass> {
        let mut out = Vec::new();
        for n in &dag.nodes {
            if let Some(c) = n.stage.task_class() {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn compatible(node_stage: Stage, node_class: TaskClass, g: &GroupState, catalog: &Catalog) -> bool {
        let model = &catalog.models[g.model_idx];
        if model.task_class != node_class {
            return false;
        }
        match node_stage {
            Stage::VIDEO_DIT => g.group.dag_component != PlanComponent::VAE_ONLY,
            Stage::VIDEO_VAE => g.group.dag_component != PlanComponent::DIT_ONLY,
            _ => g.group.dag_component == PlanComponent::WHOLE,
        }
    }

    /// Execution seconds of `node` on `g`, chunking overlong spans.
    fn exec_seconds(catalog: &Catalog, node: &crate::workflow::DagNode, g: &GroupState) -> Option<f64> {
        let model = &catalog.models[g.model_idx];
        let sku = &catalog.skus[g.sku_idx];
        if !sku.supports(model) {
            return None;
        }
        let stage_set = match node.stage {
            Stage::VIDEO_DIT => StageSet::DitOnly,
            Stage::VIDEO_VAE => StageSet::VaeOnly,
            _ => StageSet::All,
        };
        let gpus = g.group.parallel_gpus();
        if !model.gpus_compatible(gpus) {
            return None;
        }
        let mut limit = model.max_frames;
        if node.stage == Stage::AV_SYNC {
            if let Some(sync) = model.max_sync_duration {
                limit = limit.min((sync * node.quality.fps).round() as u32);
            }
        }
        let frames = node.quality.frames.max(1);
        let chunks = frames.div_ceil(limit.max(1));
        let mut cfg = node.quality;
        cfg.frames = frames.div_ceil(chunks);
        let one = catalog
            .estimate_latency(model, &cfg, sku, gpus, g.freq, stage_set)
            .ok()?
            .total();
        Some(one * chunks as f64)
    }

    /// Run the list-scheduling dispatch and derive all predicted metrics.
    pub fn evaluate(
        &self,
        catalog: &Catalog,
        regions: &RegionGraph,
        groups: &[InstanceGroup],
    ) -> PlanEstimate {
        let dag = self.dag;
        let n = dag.nodes.len();
        let mut est = PlanEstimate {
            per_group_busy: vec![0.0; groups.len()],
            per_group_first_done: vec![f64::INFINITY; groups.len()],
            slo_ok: true,
            capacity_ok: true,
            ..Default::default()
        };

        // Region indices for transfer lookups.
        let region_idx: BTreeMap<&str, usize> = regions
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let nr = regions.regions.len().max(1);
        let mut transfer = vec![(0.0f64, 0.0f64); nr * nr]; // (1/bw, latency)
        for (i, a) in regions.regions.iter().enumerate() {
            for (j, b) in regions.regions.iter().enumerate() {
                transfer[i * nr + j] = (
                    1.0 / regions.bandwidth_between(a, b),
                    regions.latency_between(a, b),
                );
            }
        }

        // Materialize group state.
        let mut gs: Vec<GroupState> = Vec::with_capacity(groups.len());
        for g in groups {
            let model_idx = match catalog.models.iter().position(|m| m.name == g.model) {
                Some(i) => i,
                None => return PlanEstimate { covered: false, ..est },
            };
            let sku_idx = match catalog.skus.iter().position(|s| s.name == g.sku) {
                Some(i) => i,
                None => return PlanEstimate { covered: false, ..est },
            };
            let sku = &catalog.skus[sku_idx];
            let model = &catalog.models[model_idx];
            let bringup = catalog.config.provision_lead_time + model.load_time + model.warmup_time;
            let existing_replicas = self
                .existing
                .map(|ex| {
                    ex.iter()
                        .filter(|e| {
                            e.model == g.model
                                && e.dag_component == g.dag_component
                                && e.sku == g.sku
                                && e.region == g.region
                                && (e.gpus_per_instance - g.gpus_per_instance).abs() < 1e-9
                        })
                        .map(|e| e.replicas)
                        .sum::<u32>()
                })
                .unwrap_or(if self.warm_start { g.replicas } else { 0 });
            let avail: Vec<f64> = (0..g.replicas)
                .map(|i| if i < existing_replicas { 0.0 } else { bringup })
                .collect();
            let freq = FrequencySetting {
                frequency_mhz: sku.max_frequency_mhz * g.frequency_fraction,
                fraction_of_max: g.frequency_fraction,
            };
            gs.push(GroupState {
                group: g,
                model_idx,
                sku_idx,
                region_idx: region_idx.get(g.region.as_str()).copied().unwrap_or(0),
                avail,
                busy_gpu_seconds: 0.0,
                first_done: f64::INFINITY,
                hourly: g.gpus_per_instance * sku.price_per_gpu_hour(g.spot),
                freq,
            });
        }

        // Coverage check and per-node candidate groups.
        let mut candidates: Vec<Vec<u16>> = vec![Vec::new(); n];
        for node in &dag.nodes {
            if let Some(class) = node.stage.task_class() {
                let c: Vec<u16> = gs
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| Self::compatible(node.stage, class, g, catalog))
                    .map(|(i, _)| i as u16)
                    .collect();
                if c.is_empty() {
                    est.covered = false;
                    est.ttff = f64::INFINITY;
                    est.ttff_eff = f64::INFINITY;
                    est.makespan = f64::INFINITY;
                    est.cost = f64::INFINITY;
                    est.energy_joules = f64::INFINITY;
                    return est;
                }
                candidates[node.id as usize] = c;
            }
        }
        est.covered = true;

        // Shot spans for screenplay streaming.
        let mut shot_spans: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for node in &dag.nodes {
            if node.stage != Stage::SCREENPLAY && node.stage != Stage::STITCH {
                let e = shot_spans
                    .entry(node.shot_index)
                    .or_insert((f64::INFINITY, 0.0));
                e.0 = e.0.min(node.content_span.0);
                e.1 = e.1.max(node.content_span.1);
            }
        }

        // Dispatch loop.
        let submit = dag.meta.submit_time;
        let mut remaining: Vec<u32> = (0..n).map(|i| dag.preds(i as u32).len() as u32).collect();
        let mut finish: Vec<f64> = vec![f64::INFINITY; n];
        let mut node_region: Vec<usize> = vec![0; n];
        let mut script_ready: Vec<f64> = Vec::new();
        let mut screenplay_id: Option<u32> = None;
        let mut cache_done: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        let mut heap: BinaryHeap<ReadyEntry> = BinaryHeap::new();
        for i in 0..n {
            if remaining[i] == 0 {
                heap.push(ReadyEntry {
                    deadline: dag.nodes[i].deadline,
                    id: i as u32,
                });
            }
        }

        let mut emit: Vec<(f64, f64, f64)> = Vec::new(); // (span_start, frames, finish)
        let mut assigned = 0usize;
        while let Some(ReadyEntry { id, .. }) = heap.pop() {
            let node = &dag.nodes[id as usize];
            assigned += 1;

            // Earliest data-ready time per candidate region is computed from
            // predecessor finishes plus the cross-region transfer.
            let preds = dag.preds(id);
            let ready_in = |region: usize| -> f64 {
                let mut t: f64 = submit;
                for &p in preds {
                    let pn = &dag.nodes[p as usize];
                    let base = if Some(p) == screenplay_id && pn.stage == Stage::SCREENPLAY {
                        // Streaming screenplay: a shot unlocks as its script
                        // text is produced, not at full completion.
                        if node.stage == Stage::STITCH {
                            finish[p as usize]
                        } else {
                            script_ready
                                .get(node.shot_index as usize)
                                .copied()
                                .unwrap_or(finish[p as usize])
                        }
                    } else {
                        finish[p as usize]
                    };
                    let (inv_bw, lat) = transfer[node_region[p as usize] * nr + region];
                    let tr = if node_region[p as usize] == region {
                        0.0
                    } else {
                        pn.output_bytes * inv_bw + lat
                    };
                    t = t.max(base + tr);
                }
                t
            };

            let done = if node.stage.task_class().is_none() {
                // Orchestrator work (stitch, static assets): negligible cost.
                node_region[id as usize] = 0;
                ready_in(0)
            } else if let Some(&(t_done, reg)) = node.cacheable_key.and_then(|k| cache_done.get(&k))
            {
                node_region[id as usize] = reg;
                ready_in(reg).max(t_done)
            } else {
                // Pick the cheapest instance that still meets the deadline,
                // else the fastest.
                let mut best: Option<(bool, f64, f64, u16, usize, f64)> = None;
                // (meets, hourly, completion, group, replica, exec)
                for &gi in &candidates[id as usize] {
                    let g = &gs[gi as usize];
                    let exec = match Self::exec_seconds(catalog, node, g) {
                        Some(e) => e,
                        None => continue,
                    };
                    let ready = ready_in(g.region_idx);
                    let (mut ri, mut rt) = (0usize, f64::INFINITY);
                    for (i, &a) in g.avail.iter().enumerate() {
                        if a < rt {
                            rt = a;
                            ri = i;
                        }
                    }
                    let start = rt.max(ready);
                    let completion = start + exec;
                    let meets = completion <= node.deadline;
                    let key = (meets, g.hourly, completion);
                    let better = match &best {
                        None => true,
                        Some((bm, bh, bc, bg, _, _)) => {
                            let cur = (
                                !meets,
                                if meets { g.hourly } else { 0.0 },
                                completion,
                                gi,
                            );
                            let old = (!bm, if *bm { *bh } else { 0.0 }, *bc, *bg);
                            cur < old
                        }
                    };
                    let _ = key;
                    if better {
                        best = Some((meets, g.hourly, completion, gi, ri, exec));
                    }
                }
                match best {
                    Some((_, _, completion, gi, ri, exec)) => {
                        let g = &mut gs[gi as usize];
                        g.avail[ri] = completion;
                        g.busy_gpu_seconds += exec * g.group.gpus_per_instance;
                        g.first_done = g.first_done.min(completion);
                        node_region[id as usize] = g.region_idx;
                        if node.stage == Stage::SCREENPLAY {
                            screenplay_id = Some(id);
                            // Per-shot unlock times within the screenplay.
                            let model = &catalog.models[g.model_idx];
                            let sku = &catalog.skus[g.sku_idx];
                            let b = catalog
                                .estimate_latency(
                                    model,
                                    &node.quality,
                                    sku,
                                    g.group.parallel_gpus(),
                                    g.freq,
                                    StageSet::All,
                                )
                                .map(|b| (b.encode, b.total() - b.encode))
                                .unwrap_or((0.0, exec));
                            let start = completion - exec;
                            let total_span: f64 =
                                shot_spans.values().map(|(a, z)| z - a).sum::<f64>().max(1e-9);
                            let mut acc = start + b.0;
                            let max_shot = shot_spans.keys().max().copied().unwrap_or(0);
                            script_ready = vec![completion; max_shot as usize + 1];
                            for (shot, (a, z)) in &shot_spans {
                                acc += b.1 * (z - a) / total_span;
                                script_ready[*shot as usize] = acc;
                            }
                        }
                        if let Some(k) = node.cacheable_key {
                            cache_done.insert(k, (completion, g.region_idx));
                        }
                        completion
                    }
                    None => f64::INFINITY,
                }
            };

            finish[id as usize] = done;
            if done.is_finite() {
                est.makespan = est.makespan.max(done - submit);
            }
            // Frame emission: terminal frame-bearing stages.
            if node.stage.emits_frames()
                && !dag
                    .succs(id)
                    .iter()
                    .any(|&s| dag.nodes[s as usize].stage.emits_frames())
            {
                let frames = (node.span_seconds() * dag.meta.fps).round().max(1.0);
                emit.push((node.content_span.0, frames, done));
                if done > node.deadline + 1e-9 {
                    est.deadline_misses += 1;
                }
            }
            for &s in dag.succs(id) {
                remaining[s as usize] -= 1;
                if remaining[s as usize] == 0 {
                    heap.push(ReadyEntry {
                        deadline: dag.nodes[s as usize].deadline,
                        id: s,
                    });
                }
            }
        }
        debug_assert_eq!(assigned, n, "dag must drain");

        // Streaming metrics from the per-segment emission series.
        if emit.is_empty() {
            est.ttff = est.makespan;
            est.ttff_eff = est.makespan;
        } else {
            emit.sort_by(|a, b| a.0.total_cmp(&b.0));
            let first_done = emit[0].2;
            let last_done = emit.iter().map(|e| e.2).fold(f64::MIN, f64::max);
            let frames: f64 = emit.iter().map(|e| e.1).sum();
            est.ttff = first_done - submit;
            let mean_tbf = if frames > 1.0 {
                (last_done - first_done) / (frames - 1.0)
            } else {
                0.0
            };
            est.ttff_eff = ttff_eff(est.ttff, mean_tbf, frames as u64, dag.meta.duration);
            let _ = frame_deadline; // pacing is reflected in node deadlines
        }

        // SLO check.
        let slo = &dag.meta.slo;
        est.slo_ok = match slo.mode {
            SloMode::REALTIME => est.ttff_eff <= slo.effective_ttff() + 1e-9,
            SloMode::DEADLINE => submit + est.makespan <= slo.absolute_deadline + 1e-9,
            SloMode::BATCH => true,
        };

        // Billing, energy.
        for (gi, g) in gs.iter().enumerate() {
            let model = &catalog.models[g.model_idx];
            let sku = &catalog.skus[g.sku_idx];
            let billed = model.load_time + model.warmup_time + est.makespan;
            let gpu_hours = g.group.total_gpus() * billed / 3600.0;
            est.cost += gpu_hours * sku.price_per_gpu_hour(g.group.spot);
            let peak = crate::catalog::estimate::peak_power_watts(sku, g.group.frequency_fraction);
            let busy_w = peak * catalog.config.busy_power_ratio;
            let idle_gpu_seconds = (g.group.total_gpus() * billed - g.busy_gpu_seconds).max(0.0);
            est.energy_joules +=
                g.busy_gpu_seconds * busy_w + idle_gpu_seconds * sku.idle_power_per_gpu;
            est.per_group_busy[gi] = g.busy_gpu_seconds;
            est.per_group_first_done[gi] = g.first_done;
        }

        // Sustained-rate capacity for multi-request workloads.
        if self.workload.qpm > 0.0 {
            let mix: Vec<(f64, SloSpec)> = if self.workload.mix.is_empty() {
                vec![(1.0, *slo)]
            } else {
                self.workload.mix.clone()
            };
            let rate = self.workload.qpm / 60.0;
            est.hourly_cost = gs.iter().map(|g| g.hourly * g.group.replicas as f64).sum();
            for (gi, g) in gs.iter().enumerate() {
                let model = &catalog.models[g.model_idx];
                let demand: f64 = mix
                    .iter()
                    .map(|(w, s)| {
                        let window_scale = match s.mode {
                            SloMode::REALTIME => 1.0 / s.slack_factor,
                            SloMode::DEADLINE => 0.5,
                            SloMode::BATCH => 1.0 / self.workload.batch_window_factor,
                        };
                        w * rate * est.per_group_busy[gi] * window_scale
                    })
                    .sum();
                if demand <= 0.0 {
                    continue;
                }
                // Batching headroom: encoder-family stages aggregate well,
                // diffusion stages are already near compute saturation.
                let curve = match model.task_class {
                    TaskClass::LLM | TaskClass::TTS | TaskClass::A2T | TaskClass::I2I => {
                        &model.batch_efficiency.encode
                    }
                    _ => &model.batch_efficiency.dit,
                };
                let mut gain = 1.0;
                for _ in 0..3 {
                    let per_gpu = demand / (g.group.total_gpus().max(1e-9) * gain);
                    let batch = per_gpu.clamp(1.0, 16.0);
                    gain = curve.eval(batch).max(1e-3);
                }
                let capacity = g.group.total_gpus() * gain * 0.9;
                if demand > capacity {
                    est.capacity_ok = false;
                }
            }
        }

        est
    }
}

/// Estimate a node's runtime on the best-suited group of a plan (used for
/// deadline propagation once a plan exists).
pub fn plan_runtime_estimator<'a>(
    catalog: &'a Catalog,
    groups: &'a [InstanceGroup],
) -> impl Fn(&crate::workflow::DagNode) -> f64 + 'a {
    move |node| {
        let class = match node.stage.task_class() {
            Some(c) => c,
            None => return 0.0,
        };
        let mut best = f64::INFINITY;
        for g in groups {
            let model = match catalog.model(&g.model) {
                Ok(m) => m,
                Err(_) => continue,
            };
            if model.task_class != class {
                continue;
            }
            let comp_ok = match node.stage {
                Stage::VIDEO_DIT => g.dag_component != PlanComponent::VAE_ONLY,
                Stage::VIDEO_VAE => g.dag_component != PlanComponent::DIT_ONLY,
                _ => g.dag_component == PlanComponent::WHOLE,
            };
            if !comp_ok {
                continue;
            }
            let sku = match catalog.sku(&g.sku) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let stage_set = match node.stage {
                Stage::VIDEO_DIT => StageSet::DitOnly,
                Stage::VIDEO_VAE => StageSet::VaeOnly,
                _ => StageSet::All,
            };
            let gpus = g.parallel_gpus();
            let mut limit = model.max_frames;
            if node.stage == Stage::AV_SYNC {
                if let Some(sync) = model.max_sync_duration {
                    limit = limit.min((sync * node.quality.fps).round() as u32);
                }
            }
            let frames = node.quality.frames.max(1);
            let chunks = frames.div_ceil(limit.max(1));
            let mut cfg = node.quality;
            cfg.frames = frames.div_ceil(chunks);
            let freq = FrequencySetting {
                frequency_mhz: sku.max_frequency_mhz * g.frequency_fraction,
                fraction_of_max: g.frequency_fraction,
            };
            if let Ok(t) = catalog.estimate_latency(model, &cfg, sku, gpus, freq, stage_set) {
                best = best.min(t.total() * chunks as f64);
            }
        }
        if best.is_finite() {
            best
        } else {
            0.0
        }
    }
}

/// A plan-independent estimator: each class served by its default binding on
/// a reference SKU at a fixed parallel width.
pub fn reference_runtime_estimator<'a>(
    catalog: &'a Catalog,
    binding: &'a BTreeMap<TaskClass, String>,
    sku_name: &'a str,
) -> Result<impl Fn(&crate::workflow::DagNode) -> f64 + 'a> {
    let sku = catalog.sku(sku_name)?;
    Ok(move |node: &crate::workflow::DagNode| {
        let class = match node.stage.task_class() {
            Some(c) => c,
            None => return 0.0,
        };
        let model = match binding.get(&class).and_then(|n| catalog.model(n).ok()) {
            Some(m) => m,
            None => return 0.0,
        };
        if !sku.supports(model) {
            return 0.0;
        }
        let gpus = (1..=sku.gpus_per_server.min(8))
            .rev()
            .find(|g| model.gpus_compatible(*g))
            .unwrap_or(1);
        let stage_set = match node.stage {
            Stage::VIDEO_DIT => StageSet::DitOnly,
            Stage::VIDEO_VAE => StageSet::VaeOnly,
            _ => StageSet::All,
        };
        let mut limit = model.max_frames;
        if node.stage == Stage::AV_SYNC {
            if let Some(sync) = model.max_sync_duration {
                limit = limit.min((sync * node.quality.fps).round() as u32);
            }
        }
        let frames = node.quality.frames.max(1);
        let chunks = frames.div_ceil(limit.max(1));
        let mut cfg = node.quality;
        cfg.frames = frames.div_ceil(chunks);
        catalog
            .estimate_latency(model, &cfg, sku, gpus, FrequencySetting::max(), stage_set)
            .map(|t| t.total() * chunks as f64)
            .unwrap_or(0.0)
    })
}
