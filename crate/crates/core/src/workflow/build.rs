//! Sketch construction, screenplay-driven refinement, and per-kind templates.

use super::{DagMeta, DagNode, NodeId, RequestSpec, SloMode, Stage, WorkflowDag, WorkflowKind};
use crate::catalog::{Catalog, QualityConfig, QualityLevel, TaskClass};
use crate::error::{Error, Result};
use crate::workflow::deadline::{propagate_deadlines, DeadlinePolicy};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Knobs controlling DAG construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowParams {
    /// Shot length assumed before the screenplay exists, seconds.
    pub default_shot_length: f64,
    /// Shots sharing one base image / scene setting.
    pub shots_per_scene: u32,
    /// Generate at reduced quality and upscale to the target.
    pub upscale_enabled: bool,
    /// Emulate a single end-to-end model: the sync model does everything.
    pub monolithic: bool,
    /// Sampled actual-shot-count factor range relative to the sketch.
    pub refine_factor_range: (f64, f64),
    /// Synthetic speech-pause spacing, seconds.
    pub pause_spacing: (f64, f64),
    /// Deadline safety margin on successor runtime estimates.
    pub deadline_margin: f64,
}

impl Default for WorkflowParams {
    fn default() -> Self {
        WorkflowParams {
            default_shot_length: 30.0,
            shots_per_scene: 8,
            upscale_enabled: true,
            monolithic: false,
            refine_factor_range: (0.8, 1.5),
            pause_spacing: (2.5, 3.5),
            deadline_margin: 0.05,
        }
    }
}

/// One actual shot produced by the screenplay stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSpec {
    pub start: f64,
    pub end: f64,
    /// Speech-pause times within (start, end), absolute on the timeline.
    pub pauses: Vec<f64>,
}

impl ShotSpec {
    pub fn seconds(&self) -> f64 {
        self.end - self.start
    }
}

/// Resolution/steps for a quality tier.
pub fn tier_shape(level: QualityLevel) -> (u32, u32, u32) {
    match level {
        QualityLevel::HIGH => (1280, 800, 20),
        QualityLevel::MEDIUM => (640, 400, 10),
        QualityLevel::LOW => (320, 200, 5),
        QualityLevel::STATIC => (320, 200, 0),
    }
}

/// Quality tier used by generation stages, given the request target and
/// whether a separate upscaler restores the target resolution afterwards.
pub fn generation_level(target: QualityLevel, upscale: bool) -> (QualityLevel, bool) {
    match (target, upscale) {
        (QualityLevel::HIGH, true) => (QualityLevel::MEDIUM, true),
        (t, _) => (t, false),
    }
}

fn fnv(parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Builds sketch DAGs and refines them once the screenplay exists.
pub struct DagBuilder<'a> {
    pub catalog: &'a Catalog,
    /// Model serving each task class, for constraint lookups and estimates.
    pub binding: BTreeMap<TaskClass, String>,
}

impl<'a> DagBuilder<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        DagBuilder {
            binding: catalog.default_binding(),
            catalog,
        }
    }

    fn chain_stages(&self, kind: WorkflowKind, params: &WorkflowParams, upscale: bool) -> Vec<Stage> {
        use Stage::*;
        if params.monolithic {
            return vec![TTS, AV_SYNC];
        }
        let mut chain = match kind {
            WorkflowKind::PODCAST | WorkflowKind::MOVIE | WorkflowKind::ANIMATED => {
                vec![TTS, BASE_IMAGE, CROP_IMAGE, VIDEO_DIT, VIDEO_VAE, AV_SYNC]
            }
            WorkflowKind::SHORT => vec![TTS, BASE_IMAGE, VIDEO_DIT, VIDEO_VAE, AV_SYNC],
            WorkflowKind::LECTURE => vec![TTS, BASE_IMAGE, STATIC_ASSET, AV_SYNC],
            WorkflowKind::PERSONA => vec![TTS, BASE_IMAGE, AV_SYNC],
            WorkflowKind::DUB => vec![TTS, AV_SYNC],
            WorkflowKind::EDIT => vec![BASE_IMAGE, VIDEO_DIT, VIDEO_VAE],
            WorkflowKind::CHAT => vec![TTS, BASE_IMAGE, VIDEO_DIT, VIDEO_VAE, AV_SYNC],
        };
        if upscale {
            chain.push(UPSCALE);
        }
        chain
    }

    /// Stages a given stage waits for within its shot, in priority order;
    /// the first present one is used (plus TTS for sync stages).
    fn visual_dep(chain: &[Stage], of: Stage) -> Option<Stage> {
        use Stage::*;
        let prefer: &[Stage] = match of {
            CROP_IMAGE => &[BASE_IMAGE],
            VIDEO_DIT => &[CROP_IMAGE, BASE_IMAGE],
            VIDEO_VAE => &[VIDEO_DIT],
            STATIC_ASSET => &[BASE_IMAGE],
            AV_SYNC => &[VIDEO_VAE, VIDEO_DIT, STATIC_ASSET, CROP_IMAGE, BASE_IMAGE],
            UPSCALE => &[AV_SYNC, VIDEO_VAE, VIDEO_DIT, STATIC_ASSET],
            _ => &[],
        };
        prefer.iter().copied().find(|s| chain.contains(s))
    }

    fn node_quality(
        &self,
        stage: Stage,
        span: (f64, f64),
        gen: QualityLevel,
        target: QualityLevel,
        fps: f64,
    ) -> QualityConfig {
        let span_secs = (span.1 - span.0).max(0.0);
        let frames = (span_secs * fps).round().max(1.0) as u32;
        let (gw, gh, gsteps) = tier_shape(gen);
        let (tw, th, _) = tier_shape(target);
        let q = |w, h, steps, frames, level| QualityConfig {
            width: w,
            height: h,
            steps,
            frames,
            fps,
            quality_level: level,
        };
        match stage {
            // Text/audio stages: frame count carries content seconds.
            Stage::SCREENPLAY | Stage::TTS => {
                q(1, 1, 1, span_secs.ceil().max(1.0) as u32, gen)
            }
            Stage::BASE_IMAGE => q(gw, gh, gsteps, 1, gen),
            Stage::CROP_IMAGE => q(gw, gh, 1, 1, gen),
            Stage::VIDEO_DIT | Stage::VIDEO_VAE | Stage::AV_SYNC => q(gw, gh, gsteps, frames, gen),
            Stage::UPSCALE => q(tw, th, 1, frames, target),
            Stage::STATIC_ASSET => q(gw, gh, 0, frames, QualityLevel::STATIC),
            Stage::STITCH => q(1, 1, 0, 1, gen),
        }
    }

    fn output_bytes(stage: Stage, q: &QualityConfig, span_secs: f64) -> f64 {
        let px = q.pixels();
        match stage {
            Stage::SCREENPLAY => 1e5,
            Stage::TTS => span_secs * 64e3,
            Stage::BASE_IMAGE | Stage::CROP_IMAGE => px * 3.0,
            // fp16 latents after 8x spatial and 4x temporal compression
            Stage::VIDEO_DIT => px / 64.0 * 16.0 * 2.0 * (1.0 + q.frames as f64 / 4.0),
            Stage::VIDEO_VAE | Stage::AV_SYNC | Stage::UPSCALE => px * 3.0 * q.frames as f64,
            Stage::STATIC_ASSET => 1e6,
            Stage::STITCH => 0.0,
        }
    }

    /// Sync-duration limit of the bound audio-sync model, if any.
    pub fn sync_limit(&self) -> Option<f64> {
        let name = self.binding.get(&TaskClass::VplusA)?;
        self.catalog.model(name).ok()?.max_sync_duration
    }

    /// Build the sketch DAG for a request: a screenplay source, placeholder
    /// per-shot chains, and a single stitch sink.
    pub fn sketch(
        &self,
        spec: &RequestSpec,
        estimate: &dyn Fn(&DagNode) -> f64,
    ) -> Result<WorkflowDag> {
        spec.validate()?;
        let params = &spec.params;
        let shot_len = params.default_shot_length;
        let n_shots = (spec.duration / shot_len).ceil().max(1.0) as u32;
        let shots: Vec<ShotSpec> = (0..n_shots)
            .map(|i| ShotSpec {
                start: i as f64 * shot_len,
                end: ((i + 1) as f64 * shot_len).min(spec.duration),
                pauses: Vec::new(),
            })
            .collect();
        self.assemble(spec, &shots, true, estimate)
    }

    /// Replace sketch placeholders with the actual shots the screenplay
    /// produced, splitting overlong sync spans at speech pauses.
    pub fn refine(
        &self,
        dag: &WorkflowDag,
        shots: &[ShotSpec],
        estimate: &dyn Fn(&DagNode) -> f64,
    ) -> Result<WorkflowDag> {
        debug_assert!(dag.sketch, "refine expects a sketch DAG");
        let meta = &dag.meta;
        validate_tiling(shots, meta.duration)?;
        let spec = RequestSpec {
            workflow_kind: meta.kind,
            duration: meta.duration,
            target_fps: meta.fps,
            target_quality: {
                let (w, h, steps) = tier_shape(meta.target_level);
                QualityConfig {
                    width: w,
                    height: h,
                    steps,
                    frames: (meta.duration * meta.fps) as u32,
                    fps: meta.fps,
                    quality_level: meta.target_level,
                }
            },
            slo: meta.slo,
            submit_time: meta.submit_time,
            params: WorkflowParams {
                upscale_enabled: meta.upscale_enabled,
                monolithic: meta.monolithic,
                ..WorkflowParams::default()
            },
        };
        let refined = self.assemble(&spec, shots, false, estimate)?;
        debug_assert!(
            (refined.node(refined.stitch_node().unwrap()).deadline
                - dag.node(dag.stitch_node().unwrap()).deadline)
                .abs()
                < 1e-6
                || dag.meta.slo.mode == SloMode::BATCH,
            "refinement must not move the final deadline"
        );
        Ok(refined)
    }

    /// Sample actual shot boundaries and speech pauses for the screenplay
    /// output (the simulation has no real screenplay text).
    pub fn sample_shots(&self, spec: &RequestSpec, seed: u64) -> Vec<ShotSpec> {
        let params = &spec.params;
        let mut rng = crate::rng::substream(seed, "screenplay-shots");
        let sketch_count = (spec.duration / params.default_shot_length).ceil().max(1.0);
        let (lo, hi) = spec.params.refine_factor_range;
        let factor = if (hi - lo).abs() < 1e-12 { lo } else { rng.gen_range(lo..hi) };
        let count = (sketch_count * factor).round().max(1.0) as usize;

        // Jittered boundaries around equal spacing.
        let mut cuts: Vec<f64> = vec![0.0];
        let step = spec.duration / count as f64;
        for i in 1..count {
            let jitter = if (hi - lo).abs() < 1e-12 {
                0.0
            } else {
                rng.gen_range(-0.2..0.2) * step
            };
            cuts.push((i as f64 * step + jitter).clamp(cuts[i - 1] + 0.5, spec.duration - 0.5));
        }
        cuts.push(spec.duration);

        let (p_lo, p_hi) = params.pause_spacing;
        cuts.windows(2)
            .map(|w| {
                let (start, end) = (w[0], w[1]);
                let mut pauses = Vec::new();
                let mut t = start;
                loop {
                    let gap = if (p_hi - p_lo).abs() < 1e-12 {
                        p_lo
                    } else {
                        rng.gen_range(p_lo..p_hi)
                    };
                    t += gap;
                    if t >= end - 0.25 {
                        break;
                    }
                    pauses.push(t);
                }
                ShotSpec { start, end, pauses }
            })
            .collect()
    }

    fn assemble(
        &self,
        spec: &RequestSpec,
        shots: &[ShotSpec],
        sketch: bool,
        estimate: &dyn Fn(&DagNode) -> f64,
    ) -> Result<WorkflowDag> {
        let params = &spec.params;
        let target = spec.target_quality.quality_level;
        let (gen, upscale) = generation_level(target, params.upscale_enabled);
        let chain = self.chain_stages(spec.workflow_kind, params, upscale);
        if chain.is_empty() {
            return Err(Error::UnsupportedWorkflowKind(format!("{:?}", spec.workflow_kind)));
        }
        let fps = spec.target_fps;
        let template_hash = fnv(&[spec.workflow_kind as u64, target as u64]);
        let sync_limit = self.sync_limit();

        let mut nodes: Vec<DagNode> = Vec::new();
        let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
        let mut push = |nodes: &mut Vec<DagNode>, n: DagNode| -> NodeId {
            let id = nodes.len() as NodeId;
            nodes.push(DagNode { id, ..n });
            id
        };

        let screenplay_q = self.node_quality(Stage::SCREENPLAY, (0.0, spec.duration), gen, target, fps);
        let screenplay = push(
            &mut nodes,
            DagNode {
                id: 0,
                stage: Stage::SCREENPLAY,
                scene_index: 0,
                shot_index: 0,
                segment_index: 0,
                quality: screenplay_q,
                content_span: (0.0, spec.duration),
                deadline: f64::INFINITY,
                output_bytes: Self::output_bytes(Stage::SCREENPLAY, &screenplay_q, spec.duration),
                cacheable_key: None,
            },
        );

        let mut terminals: Vec<NodeId> = Vec::new();
        for (shot_idx, shot) in shots.iter().enumerate() {
            let scene = shot_idx as u32 / params.shots_per_scene.max(1);
            // Sync segments: whole shot in a sketch, pause-split when refined.
            let segments: Vec<(f64, f64)> = if sketch || chain.iter().all(|s| *s != Stage::AV_SYNC) {
                vec![(shot.start, shot.end)]
            } else {
                split_segments(shot, sync_limit)
            };

            let mut placed: BTreeMap<Stage, Vec<NodeId>> = BTreeMap::new();
            for &stage in &chain {
                let per_segment = matches!(stage, Stage::AV_SYNC | Stage::UPSCALE | Stage::VIDEO_VAE)
                    && !sketch
                    && chain.contains(&Stage::AV_SYNC);
                let spans: Vec<(f64, f64)> = if per_segment {
                    segments.clone()
                } else {
                    vec![(shot.start, shot.end)]
                };
                let mut ids = Vec::new();
                for (seg_idx, &span) in spans.iter().enumerate() {
                    let q = self.node_quality(stage, span, gen, target, fps);
                    let cacheable_key = match stage {
                        Stage::BASE_IMAGE => {
                            Some(fnv(&[template_hash, scene as u64, gen as u64, 1]))
                        }
                        Stage::STATIC_ASSET => {
                            Some(fnv(&[template_hash, scene as u64, 2]))
                        }
                        _ => None,
                    };
                    let id = push(
                        &mut nodes,
                        DagNode {
                            id: 0,
                            stage,
                            scene_index: scene,
                            shot_index: shot_idx as u32,
                            segment_index: seg_idx as u32,
                            quality: q,
                            content_span: span,
                            deadline: f64::INFINITY,
                            output_bytes: Self::output_bytes(stage, &q, span.1 - span.0),
                            cacheable_key,
                        },
                    );
                    ids.push(id);

                    // Wire dependencies for this node.
                    let mut deps: Vec<NodeId> = Vec::new();
                    if matches!(stage, Stage::AV_SYNC) {
                        if let Some(tts) = placed.get(&Stage::TTS) {
                            deps.push(tts[0]);
                        }
                    }
                    if let Some(visual) = Self::visual_dep(&chain, stage) {
                        if let Some(ids) = placed.get(&visual) {
                            // Match the covering node: per-segment upstream
                            // aligns by index, per-shot upstream is shared.
                            let dep = if ids.len() == spans.len() {
                                ids[seg_idx]
                            } else {
                                ids[seg_idx.min(ids.len() - 1)]
                            };
                            deps.push(dep);
                        }
                    }
                    if deps.is_empty() {
                        deps.push(screenplay);
                    }
                    for d in deps {
                        edges.push((d, id));
                    }
                }
                placed.insert(stage, ids);
            }

            // Chain terminals feed the stitch sink.
            let last_stage = *chain.last().unwrap();
            if let Some(ids) = placed.get(&last_stage) {
                terminals.extend(ids.iter().copied());
            }
        }

        let total_frames = (spec.duration * fps) as u32;
        let stitch_q = QualityConfig {
            width: 1,
            height: 1,
            steps: 0,
            frames: total_frames.max(1),
            fps,
            quality_level: target,
        };
        let stitch = push(
            &mut nodes,
            DagNode {
                id: 0,
                stage: Stage::STITCH,
                scene_index: 0,
                shot_index: 0,
                segment_index: 0,
                quality: stitch_q,
                content_span: (0.0, spec.duration),
                deadline: f64::INFINITY,
                output_bytes: 0.0,
                cacheable_key: None,
            },
        );
        for t in terminals {
            edges.push((t, stitch));
        }

        let meta = DagMeta {
            kind: spec.workflow_kind,
            duration: spec.duration,
            fps,
            submit_time: spec.submit_time,
            target_level: target,
            slo: spec.slo,
            upscale_enabled: params.upscale_enabled,
            monolithic: params.monolithic,
        };
        let dag = WorkflowDag::new(nodes, edges, sketch, meta);
        dag.validate()?;
        propagate_deadlines(
            &dag,
            estimate,
            DeadlinePolicy {
                safety_margin: params.deadline_margin,
            },
        )
    }
}

/// Split a shot into sync segments at speech pauses, hard-cutting any
/// pause-free stretch that still exceeds the limit.
fn split_segments(shot: &ShotSpec, limit: Option<f64>) -> Vec<(f64, f64)> {
    let limit = match limit {
        Some(l) => l,
        None => return vec![(shot.start, shot.end)],
    };
    if shot.seconds() <= limit {
        return vec![(shot.start, shot.end)];
    }
    let mut boundaries = vec![shot.start];
    boundaries.extend(shot.pauses.iter().copied().filter(|p| *p > shot.start && *p < shot.end));
    boundaries.push(shot.end);

    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut seg_start = boundaries[0];
    for w in boundaries.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - seg_start > limit + 1e-9 {
            if a > seg_start {
                out.push((seg_start, a));
                seg_start = a;
            }
            // Pause-free stretch longer than the limit: hard cuts.
            while b - seg_start > limit + 1e-9 {
                out.push((seg_start, seg_start + limit));
                seg_start += limit;
            }
        }
    }
    if shot.end - seg_start > 1e-9 {
        out.push((seg_start, shot.end));
    }
    out
}

fn validate_tiling(shots: &[ShotSpec], duration: f64) -> Result<()> {
    if shots.is_empty() {
        return Err(Error::SpanGap(0.0));
    }
    let mut sorted: Vec<&ShotSpec> = shots.iter().collect();
    sorted.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
    const EPS: f64 = 1e-6;
    if sorted[0].start.abs() > EPS {
        return Err(Error::SpanGap(0.0));
    }
    let mut cursor = 0.0;
    for s in &sorted {
        if s.end <= s.start {
            return Err(Error::config(format!("empty shot span at {:.3}", s.start)));
        }
        if s.start < cursor - EPS {
            return Err(Error::SpanOverlap(s.start));
        }
        if s.start > cursor + EPS {
            return Err(Error::SpanGap(cursor));
        }
        cursor = s.end;
    }
    if (cursor - duration).abs() > EPS {
        if cursor < duration {
            return Err(Error::SpanGap(cursor));
        }
        return Err(Error::SpanOverlap(duration));
    }
    Ok(())
}

impl Catalog {
    /// Default model per task class: cheapest per unit of content among
    /// models within 50 Elo of the class's best.
    pub fn default_binding(&self) -> BTreeMap<TaskClass, String> {
        let mut out = BTreeMap::new();
        for class in TaskClass::ALL {
            let candidates = self.models_of_class(class);
            if candidates.is_empty() {
                continue;
            }
            let best_elo = candidates.iter().map(|m| m.elo).fold(f64::MIN, f64::max);
            let mut eligible: Vec<_> = candidates
                .iter()
                .filter(|m| m.elo >= best_elo - 50.0)
                .collect();
            eligible.sort_by(|a, b| {
                let ca = self.content_cost_proxy(a);
                let cb = self.content_cost_proxy(b);
                ca.partial_cmp(&cb).unwrap().then(a.name.cmp(&b.name))
            });
            out.insert(class, eligible[0].name.clone());
        }
        out
    }

    /// Seconds of single-A100 compute per second of content at the medium
    /// operating point; used only to rank models within a class.
    pub fn content_cost_proxy(&self, m: &crate::catalog::ModelProfile) -> f64 {
        use crate::catalog::{FrequencySetting, StageSet};
        let a100 = match self.sku("A100") {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        let cfg = match m.task_class {
            TaskClass::LLM | TaskClass::TTS | TaskClass::A2T => QualityConfig {
                width: 1,
                height: 1,
                steps: 1,
                frames: 30,
                fps: 16.0,
                quality_level: QualityLevel::MEDIUM,
            },
            TaskClass::T2I | TaskClass::I2I => QualityConfig {
                width: 640,
                height: 400,
                steps: if m.task_class == TaskClass::T2I { 10 } else { 1 },
                frames: 1,
                fps: 16.0,
                quality_level: QualityLevel::MEDIUM,
            },
            TaskClass::UPSCALE => QualityConfig {
                width: 1280,
                height: 800,
                steps: 1,
                frames: 81,
                fps: 23.0,
                quality_level: QualityLevel::HIGH,
            },
            _ => QualityConfig {
                width: 640,
                height: 400,
                steps: 10,
                frames: 81,
                fps: 16.0,
                quality_level: QualityLevel::MEDIUM,
            },
        };
        match self.estimate_latency(m, &cfg, a100, 1, FrequencySetting::max(), StageSet::All) {
            Ok(t) => t.total() / (cfg.frames as f64 / cfg.fps).max(1e-9),
            Err(_) => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::SloSpec;

    fn podcast(duration: f64) -> RequestSpec {
        let (w, h, steps) = tier_shape(QualityLevel::HIGH);
        RequestSpec {
            workflow_kind: WorkflowKind::PODCAST,
            duration,
            target_fps: 23.0,
            target_quality: QualityConfig {
                width: w,
                height: h,
                steps,
                frames: (duration * 23.0) as u32,
                fps: 23.0,
                quality_level: QualityLevel::HIGH,
            },
            slo: SloSpec::realtime(5.0),
            submit_time: 0.0,
            params: WorkflowParams::default(),
        }
    }

    fn flat_estimate(_: &DagNode) -> f64 {
        1.0
    }

    #[test]
    fn podcast_sketch_has_the_expected_node_count() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        let dag = b.sketch(&podcast(600.0), &flat_estimate).unwrap();
        // 20 shot chains of 7 stages plus screenplay and stitch.
        assert_eq!(dag.nodes.len(), 142);
        assert!(dag.sketch);
        dag.validate().unwrap();
    }

    #[test]
    fn single_shot_sketch_is_nine_nodes() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        let dag = b.sketch(&podcast(30.0), &flat_estimate).unwrap();
        assert_eq!(dag.nodes.len(), 9);
    }

    #[test]
    fn refinement_keeps_one_chain_per_actual_shot() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        let sketch = b.sketch(&podcast(600.0), &flat_estimate).unwrap();
        let shots: Vec<ShotSpec> = (0..43)
            .map(|i| ShotSpec {
                start: 600.0 * i as f64 / 43.0,
                end: 600.0 * (i + 1) as f64 / 43.0,
                pauses: Vec::new(),
            })
            .collect();
        let dag = b.refine(&sketch, &shots, &flat_estimate).unwrap();
        assert!(!dag.sketch);
        let tts = dag.nodes.iter().filter(|n| n.stage == Stage::TTS).count();
        assert_eq!(tts, 43);
        // Spans still tile the full timeline.
        let mut av: Vec<&DagNode> = dag.nodes.iter().filter(|n| n.stage == Stage::AV_SYNC).collect();
        av.sort_by(|a, b| a.content_span.0.partial_cmp(&b.content_span.0).unwrap());
        let mut cursor = 0.0;
        for n in &av {
            assert!((n.content_span.0 - cursor).abs() < 1e-6);
            cursor = n.content_span.1;
        }
        assert!((cursor - 600.0).abs() < 1e-6);
        // Deadlines along playback are non-decreasing.
        for w in av.windows(2) {
            assert!(w[0].deadline <= w[1].deadline + 1e-9);
        }
    }

    #[test]
    fn thirty_second_shot_splits_into_at_least_nine_sync_segments() {
        let cat = Catalog::builtin();
        let shot = ShotSpec {
            start: 0.0,
            end: 30.0,
            pauses: (1..10).map(|i| i as f64 * 3.0).collect(),
        };
        let b = DagBuilder::new(&cat);
        assert_eq!(b.sync_limit(), Some(3.5));
        let segs = split_segments(&shot, b.sync_limit());
        assert!(segs.len() >= 9, "got {} segments", segs.len());
        for (a, z) in &segs {
            assert!(z - a <= 3.5 + 1e-9);
        }
        // A sub-limit shot stays whole.
        let short = ShotSpec { start: 0.0, end: 3.0, pauses: vec![] };
        assert_eq!(split_segments(&short, Some(3.5)).len(), 1);
    }

    #[test]
    fn tiling_violations_are_rejected() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        let sketch = b.sketch(&podcast(20.0), &flat_estimate).unwrap();
        let overlap = vec![
            ShotSpec { start: 0.0, end: 10.0, pauses: vec![] },
            ShotSpec { start: 8.0, end: 20.0, pauses: vec![] },
        ];
        assert!(matches!(
            b.refine(&sketch, &overlap, &flat_estimate),
            Err(Error::SpanOverlap(_))
        ));
        let gap = vec![
            ShotSpec { start: 0.0, end: 10.0, pauses: vec![] },
            ShotSpec { start: 12.0, end: 20.0, pauses: vec![] },
        ];
        assert!(matches!(
            b.refine(&sketch, &gap, &flat_estimate),
            Err(Error::SpanGap(_))
        ));
    }

    #[test]
    fn refinement_never_moves_the_final_deadline() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        let sketch = b.sketch(&podcast(120.0), &flat_estimate).unwrap();
        let shots = b.sample_shots(&podcast(120.0), 7);
        let refined = b.refine(&sketch, &shots, &flat_estimate).unwrap();
        let d0 = sketch.node(sketch.stitch_node().unwrap()).deadline;
        let d1 = refined.node(refined.stitch_node().unwrap()).deadline;
        assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn sampled_shots_tile_and_respect_the_factor_range() {
        let cat = Catalog::builtin();
        let b = DagBuilder::new(&cat);
        for seed in 0..20 {
            let spec = podcast(600.0);
            let shots = b.sample_shots(&spec, seed);
            validate_tiling(&shots, 600.0).unwrap();
            assert!(shots.len() >= 16 && shots.len() <= 30, "{}", shots.len());
        }
    }

    #[test]
    fn default_binding_picks_the_published_pipeline() {
        let cat = Catalog::builtin();
        let b = cat.default_binding();
        assert_eq!(b[&TaskClass::LLM], "gemma3");
        assert_eq!(b[&TaskClass::TTS], "kokoro");
        assert_eq!(b[&TaskClass::T2I], "flux");
        assert_eq!(b[&TaskClass::I2I], "yolo");
        assert_eq!(b[&TaskClass::I2V], "framepack");
        assert_eq!(b[&TaskClass::VplusA], "fantasy-talking");
        assert_eq!(b[&TaskClass::UPSCALE], "real-esrgan");
    }
}
