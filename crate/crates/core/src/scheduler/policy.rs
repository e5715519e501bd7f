//! Instance selection, completion estimates, and batch formation.

use super::{InstanceState, QueuedTask};
use crate::catalog::{Catalog, FrequencySetting, StageSet, TaskClass};
use crate::error::{Error, Result};
use crate::provisioner::{InstanceGroup, PlanComponent};
use crate::workflow::{DagNode, Stage};

/// Execution context shared by the policy functions.
pub struct SchedCtx<'a> {
    pub catalog: &'a Catalog,
    pub groups: &'a [InstanceGroup],
}

/// Whether an instance's group can execute a node's stage.
pub fn stage_compatible(catalog: &Catalog, group: &InstanceGroup, stage: Stage) -> bool {
    let class = match stage.task_class() {
        Some(c) => c,
        None => return false,
    };
    let model = match catalog.model(&group.model) {
        Ok(m) => m,
        Err(_) => return false,
    };
    if model.task_class != class {
        return false;
    }
    match stage {
        Stage::VIDEO_DIT => group.dag_component != PlanComponent::VAE_ONLY,
        Stage::VIDEO_VAE => group.dag_component != PlanComponent::DIT_ONLY,
        _ => group.dag_component == PlanComponent::WHOLE,
    }
}

/// Execution seconds of a node on an instance of `group`, chunking spans
/// that exceed the model's generation-length limits.
pub fn exec_seconds(catalog: &Catalog, group: &InstanceGroup, node: &DagNode) -> Result<f64> {
    let model = catalog.model(&group.model)?;
    let sku = catalog.sku(&group.sku)?;
    if node.quality.steps == 0 && node.quality.quality_level == crate::catalog::QualityLevel::STATIC
    {
        return Ok(0.0);
    }
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
    let freq = FrequencySetting {
        frequency_mhz: sku.max_frequency_mhz * group.frequency_fraction,
        fraction_of_max: group.frequency_fraction,
    };
    let one = catalog
        .estimate_latency(model, &cfg, sku, group.parallel_gpus(), freq, stage_set)?
        .total();
    Ok(one * chunks as f64)
}

/// Expected completion time of `node` on `inst`: remaining busy time plus
/// queued work ahead in deadline order, data transfer, and the execution
/// estimate at the node's quality.
pub fn expected_completion(
    ctx: &SchedCtx,
    node: &DagNode,
    inst: &InstanceState,
    data_ready: f64,
    now: f64,
) -> Result<f64> {
    let group = &ctx.groups[inst.group_idx];
    if !stage_compatible(ctx.catalog, group, node.stage) {
        return Err(Error::IncompatibleTask {
            task: node.stage.name().into(),
            model: group.model.clone(),
        });
    }
    let exec = exec_seconds(ctx.catalog, group, node)?;
    let free_at = inst.busy_until.max(inst.warm_at).max(now);
    let wait = inst.queued_work_before(node.deadline, u64::MAX);
    let start = (free_at + wait).max(data_ready);
    Ok(start + exec)
}

/// Outcome of instance selection for one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstancePick {
    pub instance_idx: usize,
    pub completion: f64,
    pub exec_seconds: f64,
    pub data_ready: f64,
    pub meets_deadline: bool,
}

/// Pick the serving instance for a node: the cheapest instance that still
/// meets the deadline, otherwise the one with the shortest expected
/// completion. `data_ready_in` gives the input-availability time per region.
pub fn pick_instance(
    ctx: &SchedCtx,
    node: &DagNode,
    instances: &[InstanceState],
    now: f64,
    data_ready_in: &dyn Fn(usize) -> f64,
) -> Option<InstancePick> {
    let mut best: Option<(InstancePick, f64, usize)> = None; // pick, hourly, idx
    for (i, inst) in instances.iter().enumerate() {
        if !inst.alive || !inst.accepting {
            continue;
        }
        let group = &ctx.groups[inst.group_idx];
        if !stage_compatible(ctx.catalog, group, node.stage) {
            continue;
        }
        let exec = match exec_seconds(ctx.catalog, group, node) {
            Ok(e) => e,
            Err(_) => continue,
        };
        let data_ready = data_ready_in(inst.region_idx);
        let free_at = inst.busy_until.max(inst.warm_at).max(now);
        let start = (free_at + inst.queued_work_before(node.deadline, u64::MAX)).max(data_ready);
        let completion = start + exec;
        let hourly = {
            let sku = ctx.catalog.sku(&group.sku).ok()?;
            group.gpus_per_instance * sku.price_per_gpu_hour(group.spot)
        };
        let pick = InstancePick {
            instance_idx: i,
            completion,
            exec_seconds: exec,
            data_ready,
            meets_deadline: completion <= node.deadline + 1e-9,
        };
        let better = match &best {
            None => true,
            Some((b, bh, bi)) => {
                let cur = (
                    !pick.meets_deadline,
                    if pick.meets_deadline { hourly } else { 0.0 },
                    completion,
                    i,
                );
                let old = (!b.meets_deadline, if b.meets_deadline { *bh } else { 0.0 }, b.completion, *bi);
                cur < old
            }
        };
        if better {
            best = Some((pick, hourly, i));
        }
    }
    best.map(|(p, _, _)| p)
}

/// Deadline-sorted view of ready nodes (EDF at the scheduler).
pub fn dispatch_order(nodes: &mut Vec<u32>, deadline_of: &dyn Fn(u32) -> f64) {
    nodes.sort_by(|&a, &b| {
        deadline_of(a)
            .total_cmp(&deadline_of(b))
            .then_with(|| a.cmp(&b))
    });
}

/// An admitted batch: queue positions plus the shared completion estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Indices into the instance queue, EDF head first.
    pub members: Vec<usize>,
    /// Wall-clock seconds the whole batch occupies the instance.
    pub exec_seconds: f64,
}

fn batch_family(catalog: &Catalog, group: &InstanceGroup, stage: Stage) -> (usize, &'static str) {
    // (cap, curve family)
    let model = match catalog.model(&group.model) {
        Ok(m) => m,
        Err(_) => return (1, "vae"),
    };
    match stage {
        Stage::VIDEO_VAE => (1, "vae"),
        Stage::VIDEO_DIT | Stage::AV_SYNC | Stage::BASE_IMAGE => (4, "dit"),
        Stage::UPSCALE => (4, "dit"),
        _ => match model.task_class {
            TaskClass::LLM | TaskClass::TTS | TaskClass::A2T | TaskClass::I2I => (16, "encode"),
            _ => (4, "dit"),
        },
    }
}

/// Form the largest deadline-safe batch at the head of an instance queue.
///
/// DiT-family batches cap at four with marginal gains, VAE tasks always run
/// alone, and encoder-family stages batch freely. A batch is deadline-safe
/// when delaying every member to the shared completion still meets each
/// member's deadline.
pub fn batch_admit(
    catalog: &Catalog,
    group: &InstanceGroup,
    queue: &[QueuedTask],
    stage_of: &dyn Fn(u32) -> Stage,
    start_time: f64,
) -> Batch {
    debug_assert!(!queue.is_empty());
    let head_stage = stage_of(queue[0].node_id);
    let (cap, family) = batch_family(catalog, group, head_stage);
    let model = catalog.model(&group.model).ok();
    let curve = model.map(|m| match family {
        "encode" => &m.batch_efficiency.encode,
        "vae" => &m.batch_efficiency.vae,
        _ => &m.batch_efficiency.dit,
    });

    let mut members = vec![0usize];
    let mut exec = queue[0].exec_seconds;
    if cap > 1 {
        for (i, t) in queue.iter().enumerate().skip(1) {
            if members.len() >= cap {
                break;
            }
            if stage_of(t.node_id) != head_stage {
                continue;
            }
            if t.data_ready > start_time + 1e-9 {
                continue;
            }
            let k = members.len() + 1;
            let gain = curve.map(|c| c.eval(k as f64)).unwrap_or(1.0).max(1e-6);
            let per = queue[0].exec_seconds.max(t.exec_seconds);
            let batch_exec = per * k as f64 / gain;
            // Deadline safety for every member at the shared completion.
            let done = start_time + batch_exec;
            let safe = members
                .iter()
                .chain(std::iter::once(&i))
                .all(|&m| done <= queue[m].deadline + 1e-9);
            if safe {
                members.push(i);
                exec = batch_exec;
            }
        }
    }
    Batch {
        members,
        exec_seconds: exec,
    }
}

/// What happens to a running batch when its instance gets an eviction
/// notice: work finishing within the grace window completes, the rest is
/// requeued at the eviction instant.
pub fn survives_notice(batch_completion: f64, notice_at: f64, grace: f64) -> bool {
    batch_completion <= notice_at + grace + 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{QualityConfig, QualityLevel};

    fn group(model: &str, sku: &str) -> InstanceGroup {
        InstanceGroup {
            model: model.into(),
            dag_component: PlanComponent::WHOLE,
            sku: sku.into(),
            region: "westus".into(),
            gpus_per_instance: 1.0,
            replicas: 1,
            spot: false,
            frequency_fraction: 1.0,
        }
    }

    fn task(node_id: u32, deadline: f64, exec: f64) -> QueuedTask {
        QueuedTask {
            request_id: 0,
            node_id,
            deadline,
            seq: node_id as u64,
            data_ready: 0.0,
            exec_seconds: exec,
            rung: 0,
        }
    }

    #[test]
    fn vae_tasks_never_batch() {
        let cat = Catalog::builtin();
        let g = group("framepack", "A100");
        let queue = vec![task(0, 100.0, 5.0), task(1, 100.0, 5.0)];
        let b = batch_admit(&cat, &g, &queue, &|_| Stage::VIDEO_VAE, 0.0);
        assert_eq!(b.members, vec![0]);
    }

    #[test]
    fn dit_batches_cap_at_four_with_marginal_gain() {
        let cat = Catalog::builtin();
        let g = group("fantasy-talking", "A100");
        let queue: Vec<QueuedTask> = (0..6).map(|i| task(i, 1e6, 10.0)).collect();
        let b = batch_admit(&cat, &g, &queue, &|_| Stage::AV_SYNC, 0.0);
        assert_eq!(b.members.len(), 4);
        // Four tasks in one batch must not be more than ~5% faster than
        // running them back to back.
        assert!(b.exec_seconds >= 4.0 * 10.0 / 1.05 - 1e-9);
        assert!(b.exec_seconds <= 4.0 * 10.0 + 1e-9);
    }

    #[test]
    fn tight_head_deadline_forces_a_singleton() {
        let cat = Catalog::builtin();
        let g = group("fantasy-talking", "A100");
        let queue = vec![task(0, 10.5, 10.0), task(1, 1e6, 10.0)];
        let b = batch_admit(&cat, &g, &queue, &|_| Stage::AV_SYNC, 0.0);
        assert_eq!(b.members, vec![0]);
    }

    #[test]
    fn encoder_stages_batch_widely() {
        let cat = Catalog::builtin();
        let g = group("kokoro", "A100");
        let queue: Vec<QueuedTask> = (0..12).map(|i| task(i, 1e6, 0.5)).collect();
        let b = batch_admit(&cat, &g, &queue, &|_| Stage::TTS, 0.0);
        assert!(b.members.len() >= 8, "got {}", b.members.len());
        assert!(b.exec_seconds < 0.5 * b.members.len() as f64);
    }

    #[test]
    fn notice_grace_window() {
        assert!(survives_notice(25.0, 0.0, 30.0));
        assert!(!survives_notice(45.0, 0.0, 30.0));
    }
}
