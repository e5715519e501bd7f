//! Runtime scheduling policy: deadline-ordered queues, instance selection,
//! adaptive quality, model constraints, caching, and eviction outcomes.
//!
//! The simulation engine owns all mutable state; the types and functions
//! here are the policy surface it consults. Everything is deterministic.

mod policy;

pub use policy::{
    batch_admit, dispatch_order, expected_completion, pick_instance, Batch, InstancePick,
};

use crate::catalog::{QualityConfig, QualityLevel};
use crate::error::{Error, Result};
use crate::workflow::{DagNode, Stage};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A task waiting in an instance's local queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedTask {
    pub request_id: u64,
    pub node_id: u32,
    pub deadline: f64,
    /// Tie-break for equal deadlines; assignment order.
    pub seq: u64,
    /// Time the inputs are available on this instance (transfer included).
    pub data_ready: f64,
    /// Estimated execution seconds on this instance.
    pub exec_seconds: f64,
    /// Quality rung index the task was admitted at.
    pub rung: usize,
}

/// Live state of one model instance.
#[derive(Debug, Clone)]
pub struct InstanceState {
    pub group_idx: usize,
    pub instance_id: u32,
    pub region_idx: usize,
    /// Deadline-ordered pending tasks.
    pub local_queue: Vec<QueuedTask>,
    pub busy_until: f64,
    pub loaded: bool,
    pub load_ready_at: f64,
    pub warm_at: f64,
    pub alive: bool,
    pub accepting: bool,
    pub eviction_notice_at: Option<f64>,
    /// Busy intervals for billing/energy accounting.
    pub busy_intervals: Vec<(f64, f64)>,
    /// First wall-clock second this instance is billed from.
    pub up_at: f64,
}

impl InstanceState {
    pub fn enqueue(&mut self, task: QueuedTask) {
        let pos = self
            .local_queue
            .partition_point(|t| (t.deadline, t.seq) <= (task.deadline, task.seq));
        self.local_queue.insert(pos, task);
    }

    /// Total queued work ahead of a given deadline.
    pub fn queued_work_before(&self, deadline: f64, seq: u64) -> f64 {
        self.local_queue
            .iter()
            .filter(|t| (t.deadline, t.seq) < (deadline, seq))
            .map(|t| t.exec_seconds)
            .sum()
    }

    pub fn queued_work(&self) -> f64 {
        self.local_queue.iter().map(|t| t.exec_seconds).sum()
    }

    pub fn ready_for_work(&self, now: f64) -> bool {
        self.alive && self.accepting && now + 1e-9 >= self.warm_at
    }
}

/// One rung of the adaptive quality ladder: the config generation runs at,
/// whether a separate upscale pass restores the target resolution, and the
/// quality level the viewer ends up seeing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub delivered: QualityLevel,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub upscale: bool,
}

impl LadderRung {
    /// Work proxy used for the monotonicity invariant.
    pub fn work_product(&self, target: (u32, u32)) -> f64 {
        let gen = self.width as f64 * self.height as f64 * self.steps as f64;
        let up = if self.upscale {
            target.0 as f64 * target.1 as f64
        } else {
            0.0
        };
        gen + up
    }
}

/// Ordered quality rungs from the request target down to static content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLadder {
    pub rungs: Vec<LadderRung>,
    pub target: (u32, u32),
}

impl QualityLadder {
    /// Standard ladder for a target level, optionally routing HIGH through
    /// medium-resolution generation plus upscaling.
    pub fn standard(target: QualityLevel, upscale_enabled: bool) -> Self {
        use crate::workflow::build::tier_shape;
        let (tw, th, _) = tier_shape(if target == QualityLevel::STATIC {
            QualityLevel::LOW
        } else {
            target
        });
        let mut rungs = Vec::new();
        let mut push = |delivered: QualityLevel, run: QualityLevel, upscale: bool| {
            let (w, h, s) = tier_shape(run);
            rungs.push(LadderRung {
                delivered,
                width: w,
                height: h,
                steps: s,
                upscale,
            });
        };
        match target {
            QualityLevel::HIGH => {
                if upscale_enabled {
                    push(QualityLevel::HIGH, QualityLevel::MEDIUM, true);
                } else {
                    push(QualityLevel::HIGH, QualityLevel::HIGH, false);
                }
                push(QualityLevel::MEDIUM, QualityLevel::MEDIUM, false);
                push(QualityLevel::LOW, QualityLevel::LOW, false);
            }
            QualityLevel::MEDIUM => {
                push(QualityLevel::MEDIUM, QualityLevel::MEDIUM, false);
                push(QualityLevel::LOW, QualityLevel::LOW, false);
            }
            QualityLevel::LOW | QualityLevel::STATIC => {
                push(QualityLevel::LOW, QualityLevel::LOW, false);
            }
        }
        rungs.push(LadderRung {
            delivered: QualityLevel::STATIC,
            width: 0,
            height: 0,
            steps: 0,
            upscale: false,
        });
        let ladder = QualityLadder {
            rungs,
            target: (tw, th),
        };
        debug_assert!(ladder.validate().is_ok());
        ladder
    }

    /// Apply a rung to a generation node's quality config.
    pub fn apply(&self, rung: usize, node: &DagNode) -> QualityConfig {
        let r = &self.rungs[rung.min(self.rungs.len() - 1)];
        let mut q = node.quality;
        if r.delivered == QualityLevel::STATIC {
            q.steps = 0;
            q.quality_level = QualityLevel::STATIC;
            return q;
        }
        // Text/audio stages keep their shape; only pixel stages degrade.
        if q.width > 1 {
            q.width = r.width;
            q.height = r.height;
            q.steps = r.steps;
        }
        q.quality_level = r.delivered;
        q
    }

    pub fn validate(&self) -> Result<()> {
        if self.rungs.is_empty() {
            return Err(Error::config("quality ladder must not be empty"));
        }
        if self.rungs.last().unwrap().delivered != QualityLevel::STATIC {
            return Err(Error::config("ladder must end in STATIC"));
        }
        for w in self.rungs.windows(2) {
            if w[1].work_product(self.target) >= w[0].work_product(self.target) {
                return Err(Error::config("ladder work must strictly decrease"));
            }
        }
        Ok(())
    }
}

/// Reference to a cached artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub region_idx: usize,
    pub bytes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CacheOutcome {
    Hit(ArtifactRef),
    Miss,
}

/// Capacity-bounded LRU store for reusable assets keyed by content hash.
#[derive(Debug, Clone)]
pub struct CacheStore {
    capacity_bytes: f64,
    used_bytes: f64,
    seq: u64,
    entries: BTreeMap<u64, (ArtifactRef, f64, u64)>, // key -> (artifact, creation_cost, last_use)
    pub hits: u64,
    pub misses: u64,
}

impl CacheStore {
    pub fn new(capacity_bytes: f64) -> Self {
        CacheStore {
            capacity_bytes,
            used_bytes: 0.0,
            seq: 0,
            entries: BTreeMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn lookup(&mut self, key: u64) -> CacheOutcome {
        self.seq += 1;
        let seq = self.seq;
        match self.entries.get_mut(&key) {
            Some((artifact, _, last)) => {
                *last = seq;
                self.hits += 1;
                CacheOutcome::Hit(artifact.clone())
            }
            None => {
                self.misses += 1;
                CacheOutcome::Miss
            }
        }
    }

    /// Admit an artifact after its producing node completes, evicting the
    /// least recently used entries on overflow.
    pub fn admit(&mut self, key: u64, artifact: ArtifactRef, creation_cost: f64) {
        self.seq += 1;
        if self.entries.contains_key(&key) {
            return;
        }
        if artifact.bytes > self.capacity_bytes {
            return;
        }
        self.used_bytes += artifact.bytes;
        self.entries.insert(key, (artifact, creation_cost, self.seq));
        while self.used_bytes > self.capacity_bytes {
            let lru = self
                .entries
                .iter()
                .min_by_key(|(_, (_, _, last))| *last)
                .map(|(k, _)| *k);
            match lru {
                Some(k) => {
                    if let Some((a, _, _)) = self.entries.remove(&k) {
                        self.used_bytes -= a.bytes;
                    }
                }
                None => break,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Snap a resolution down to the model's VAE-compression grid.
pub fn snap_resolution(width: u32, height: u32, compression: u32) -> Result<(u32, u32)> {
    if compression <= 1 {
        return Ok((width, height));
    }
    let w = width / compression * compression;
    let h = height / compression * compression;
    if w == 0 || h == 0 {
        return Err(Error::NoValidResolution {
            model: String::new(),
            width,
            height,
        });
    }
    Ok((w, h))
}

/// Enforce per-model limits on a node: sync spans are split at the drift
/// limit, overlong videos are chained into max-frame chunks, and resolutions
/// snap to the VAE grid. Returns the (possibly replaced) nodes in playback
/// order; callers chain them sequentially.
pub fn enforce_model_constraints(
    node: &DagNode,
    profile: &crate::catalog::ModelProfile,
) -> Result<Vec<DagNode>> {
    let mut base = node.clone();
    let (w, h) = snap_resolution(
        base.quality.width,
        base.quality.height,
        profile.vae_spatial_compression,
    )
    .map_err(|_| Error::NoValidResolution {
        model: profile.name.clone(),
        width: base.quality.width,
        height: base.quality.height,
    })?;
    base.quality.width = w;
    base.quality.height = h;

    let span = base.span_seconds();
    let limit_secs = match node.stage {
        Stage::AV_SYNC => profile
            .max_sync_duration
            .unwrap_or(f64::INFINITY)
            .min(profile.max_frames as f64 / base.quality.fps),
        Stage::VIDEO_DIT | Stage::VIDEO_VAE => profile.max_frames as f64 / base.quality.fps,
        _ => f64::INFINITY,
    };
    if span <= limit_secs + 1e-9 {
        return Ok(vec![base]);
    }
    let pieces = (span / limit_secs).ceil() as usize;
    let step = span / pieces as f64;
    let mut out = Vec::with_capacity(pieces);
    for i in 0..pieces {
        let mut n = base.clone();
        n.content_span = (
            base.content_span.0 + i as f64 * step,
            if i + 1 == pieces {
                base.content_span.1
            } else {
                base.content_span.0 + (i + 1) as f64 * step
            },
        );
        n.segment_index = base.segment_index + i as u32;
        n.quality.frames = ((n.content_span.1 - n.content_span.0) * n.quality.fps)
            .round()
            .max(1.0) as u32;
        out.push(n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::workflow::Stage;

    fn node(stage: Stage, span: (f64, f64), fps: f64) -> DagNode {
        DagNode {
            id: 0,
            stage,
            scene_index: 0,
            shot_index: 0,
            segment_index: 0,
            quality: QualityConfig {
                width: 640,
                height: 400,
                steps: 10,
                frames: ((span.1 - span.0) * fps) as u32,
                fps,
                quality_level: QualityLevel::MEDIUM,
            },
            content_span: span,
            deadline: f64::INFINITY,
            output_bytes: 0.0,
            cacheable_key: None,
        }
    }

    #[test]
    fn long_sync_spans_split_at_the_drift_limit() {
        let cat = Catalog::builtin();
        let ft = cat.model("fantasy-talking").unwrap();
        let parts = enforce_model_constraints(&node(Stage::AV_SYNC, (0.0, 30.0), 23.0), ft).unwrap();
        assert!(parts.len() >= 9, "{} parts", parts.len());
        for p in &parts {
            assert!(p.span_seconds() <= 3.5 + 1e-9);
        }
        // Short spans pass through untouched.
        let one = enforce_model_constraints(&node(Stage::AV_SYNC, (0.0, 3.0), 23.0), ft).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn resolutions_snap_to_the_vae_grid() {
        let cat = Catalog::builtin();
        let ft = cat.model("fantasy-talking").unwrap();
        let mut n = node(Stage::AV_SYNC, (0.0, 3.0), 23.0);
        n.quality.width = 854;
        n.quality.height = 480;
        let out = enforce_model_constraints(&n, ft).unwrap();
        assert_eq!((out[0].quality.width, out[0].quality.height), (848, 480));
        assert_eq!(snap_resolution(854, 480, 8).unwrap(), (848, 480));
    }

    #[test]
    fn ladders_end_in_static_and_strictly_shrink() {
        for (target, upscale) in [
            (QualityLevel::HIGH, true),
            (QualityLevel::HIGH, false),
            (QualityLevel::MEDIUM, false),
            (QualityLevel::LOW, false),
        ] {
            let l = QualityLadder::standard(target, upscale);
            l.validate().unwrap();
            assert_eq!(l.rungs.last().unwrap().delivered, QualityLevel::STATIC);
        }
        let l = QualityLadder::standard(QualityLevel::HIGH, true);
        assert!(l.rungs[0].upscale);
        assert_eq!(l.rungs[0].delivered, QualityLevel::HIGH);
        assert_eq!(l.rungs[0].width, 640);
    }

    #[test]
    fn lru_cache_thrashes_on_alternating_keys_at_capacity_one() {
        let mut cache = CacheStore::new(10.0);
        let art = |b: f64| ArtifactRef { region_idx: 0, bytes: b };
        // Two 10-byte artifacts: only one fits.
        for _ in 0..4 {
            assert_eq!(cache.lookup(1), CacheOutcome::Miss);
            cache.admit(1, art(10.0), 1.0);
            assert_eq!(cache.lookup(2), CacheOutcome::Miss);
            cache.admit(2, art(10.0), 1.0);
        }
        assert_eq!(cache.hits, 0, "alternating keys at capacity one never hit");
        // Same key twice hits.
        let mut cache = CacheStore::new(100.0);
        cache.admit(7, art(10.0), 1.0);
        assert!(matches!(cache.lookup(7), CacheOutcome::Hit(_)));
    }

    #[test]
    fn queue_stays_deadline_ordered() {
        let mut inst = InstanceState {
            group_idx: 0,
            instance_id: 0,
            region_idx: 0,
            local_queue: Vec::new(),
            busy_until: 0.0,
            loaded: true,
            load_ready_at: 0.0,
            warm_at: 0.0,
            alive: true,
            accepting: true,
            eviction_notice_at: None,
            busy_intervals: Vec::new(),
            up_at: 0.0,
        };
        for (d, s) in [(10.0, 0), (5.0, 1), (7.5, 2), (5.0, 3)] {
            inst.enqueue(QueuedTask {
                request_id: 0,
                node_id: s as u32,
                deadline: d,
                seq: s,
                data_ready: 0.0,
                exec_seconds: 1.0,
                rung: 0,
            });
        }
        let deadlines: Vec<f64> = inst.local_queue.iter().map(|t| t.deadline).collect();
        assert_eq!(deadlines, vec![5.0, 5.0, 7.5, 10.0]);
        assert_eq!(inst.queued_work_before(7.5, 2), 2.0);
    }
}
