//! TTFF/TBF streaming math and deadline propagation.

use super::{DagNode, SloMode, Stage, WorkflowDag};
use crate::error::Result;

/// Effective startup delay that guarantees uninterrupted playback: even if
/// the first frame arrives quickly, production must outpace playback or the
/// viewer must wait out the shortfall up front.
pub fn ttff_eff(ttff: f64, mean_tbf: f64, frames: u64, duration: f64) -> f64 {
    debug_assert!(ttff >= 0.0 && mean_tbf >= 0.0 && duration >= 0.0);
    ttff.max(mean_tbf * frames as f64 - duration)
}

/// Absolute time frame `frame_index` must be displayed: frame 0 is due at
/// first-frame display, frame k follows at the playback rate.
pub fn frame_deadline(frame_index: u64, fps: f64, ttff: f64, submit_time: f64) -> f64 {
    debug_assert!(fps > 0.0);
    submit_time + ttff + frame_index as f64 / fps
}

/// Sustained time-between-frames needed to produce `frame_index` frames
/// between first display at `ttff` and the frame's playback deadline.
pub fn required_tbf(frame_index: u64, fps: f64, ttff: f64) -> f64 {
    debug_assert!(frame_index > 0);
    (frame_index as f64 / fps - ttff) / frame_index as f64
}

/// How deadlines are derived from estimated runtimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadlinePolicy {
    /// Safety margin added to successor runtime estimates when recursing.
    pub safety_margin: f64,
}

impl Default for DeadlinePolicy {
    fn default() -> Self {
        DeadlinePolicy { safety_margin: 0.05 }
    }
}

/// Assign per-node deadlines from the SLO and runtime estimates.
///
/// The final node's deadline is `submit + ttff + duration` for REALTIME, the
/// absolute deadline for DEADLINE, and unbounded for BATCH. Every other node
/// gets the tightest bound over its successors, and frame-emitting spans are
/// additionally capped by the playback deadline of their first frame.
pub fn propagate_deadlines(
    dag: &WorkflowDag,
    estimate: &dyn Fn(&DagNode) -> f64,
    policy: DeadlinePolicy,
) -> Result<WorkflowDag> {
    let meta = &dag.meta;
    let slack = meta.slo.slack_factor;
    let final_deadline = match meta.slo.mode {
        SloMode::REALTIME => meta.submit_time + slack * (meta.slo.ttff_target + meta.duration),
        SloMode::DEADLINE => meta.slo.absolute_deadline,
        SloMode::BATCH => f64::INFINITY,
    };

    let order = dag.topo_order()?;
    let mut out = dag.clone();
    out.rebuild_adjacency();
    for n in &mut out.nodes {
        n.deadline = f64::INFINITY;
    }
    if let Some(stitch) = out.stitch_node() {
        out.nodes[stitch as usize].deadline = final_deadline;
    }

    for &id in order.iter().rev() {
        let succs: Vec<u32> = out.succs(id).to_vec();
        let mut deadline = if succs.is_empty() {
            final_deadline
        } else {
            let mut d = f64::INFINITY;
            for s in succs {
                let sn = &out.nodes[s as usize];
                let est = estimate(sn) * (1.0 + policy.safety_margin);
                d = d.min(sn.deadline - est);
            }
            d
        };
        let node = &mut out.nodes[id as usize];
        // Playback pacing cap for frame-emitting work.
        if meta.slo.mode == SloMode::REALTIME
            && node.stage.emits_frames()
            && node.stage != Stage::STITCH
        {
            let first_frame = (node.content_span.0 * meta.fps).round() as u64;
            let cap = meta.submit_time
                + slack * (meta.slo.ttff_target + first_frame as f64 / meta.fps);
            deadline = deadline.min(cap);
        }
        node.deadline = node.deadline.min(deadline);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{QualityConfig, QualityLevel};
    use crate::workflow::{DagMeta, SloSpec, WorkflowKind};

    #[test]
    fn ttff_eff_matches_the_worked_podcast_example() {
        // 10-minute video at 24 FPS with a 50 ms TBF: two minutes even with a
        // 30-second TTFF.
        assert_eq!(ttff_eff(30.0, 0.050, 14_400, 600.0), 120.0);
        // Production faster than playback leaves TTFF dominant.
        assert_eq!(ttff_eff(30.0, 0.040, 14_400, 600.0), 30.0);
        // Empty stream.
        assert_eq!(ttff_eff(0.0, 0.0, 0, 600.0), 0.0);
    }

    #[test]
    fn frame_deadline_and_required_tbf() {
        let d = frame_deadline(172, 24.0, 0.0, 0.0);
        assert!((d - 7.1667).abs() < 1e-3);
        assert_eq!(frame_deadline(0, 30.0, 5.0, 100.0), 105.0);
        let tbf = required_tbf(172, 24.0, 1.0);
        assert!((tbf - 0.036).abs() < 1e-3, "tbf {tbf}");
    }

    fn tiny_dag(n_chain: usize) -> WorkflowDag {
        let cfg = QualityConfig {
            width: 640,
            height: 400,
            steps: 10,
            frames: 81,
            fps: 24.0,
            quality_level: QualityLevel::MEDIUM,
        };
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for i in 0..n_chain {
            nodes.push(DagNode {
                id: i as u32,
                stage: if i + 1 == n_chain { Stage::STITCH } else { Stage::VIDEO_DIT },
                scene_index: 0,
                shot_index: 0,
                segment_index: 0,
                quality: cfg,
                content_span: (0.0, 1.0),
                deadline: f64::INFINITY,
                output_bytes: 0.0,
                cacheable_key: None,
            });
            if i > 0 {
                edges.push((i as u32 - 1, i as u32));
            }
        }
        WorkflowDag::new(
            nodes,
            edges,
            false,
            DagMeta {
                kind: WorkflowKind::PODCAST,
                duration: 600.0,
                fps: 24.0,
                submit_time: 0.0,
                target_level: QualityLevel::HIGH,
                slo: SloSpec::realtime(5.0),
                upscale_enabled: false,
                monolithic: false,
            },
        )
    }

    #[test]
    fn final_node_deadline_follows_the_slo() {
        let dag = tiny_dag(1);
        let out = propagate_deadlines(&dag, &|_| 10.0, DeadlinePolicy::default()).unwrap();
        // REALTIME ttff 5 and duration 600 put the final node at t+605.
        assert_eq!(out.nodes[0].deadline, 605.0);
    }

    #[test]
    fn chain_recursion_subtracts_successor_runtime() {
        let dag = tiny_dag(2);
        let out =
            propagate_deadlines(&dag, &|_| 10.0, DeadlinePolicy { safety_margin: 0.0 }).unwrap();
        assert_eq!(out.nodes[1].deadline, 605.0);
        assert_eq!(out.nodes[0].deadline, 595.0);
    }

    #[test]
    fn cycles_are_rejected() {
        let mut dag = tiny_dag(2);
        dag.edges.push((1, 0));
        dag.rebuild_adjacency();
        let err = propagate_deadlines(&dag, &|_| 1.0, DeadlinePolicy::default()).unwrap_err();
        assert!(matches!(err, crate::error::Error::CycleDetected));
    }
}
