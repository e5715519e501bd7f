//! Generation workflow DAGs, per-node deadlines, and the streaming math.
//!
//! A request is represented as a typed DAG of generation tasks (shots x
//! stages). Sketch DAGs are built from the request alone; once the screenplay
//! stage produces actual shot boundaries the DAG is refined in place of the
//! placeholders. DAG values are immutable snapshots: refinement produces a
//! new version.

mod build;
mod deadline;

pub use build::{DagBuilder, ShotSpec, WorkflowParams};
pub use deadline::{
    frame_deadline, propagate_deadlines, required_tbf, ttff_eff, DeadlinePolicy,
};

use crate::catalog::{QualityConfig, QualityLevel, TaskClass};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Supported workflow families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkflowKind {
    PODCAST,
    SHORT,
    MOVIE,
    ANIMATED,
    LECTURE,
    PERSONA,
    DUB,
    EDIT,
    CHAT,
}

/// Service-level objective class of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SloMode {
    /// Streaming playback: first frame within the TTFF target, then paced.
    REALTIME,
    /// Finish everything by an absolute wall-clock deadline.
    DEADLINE,
    /// No deadline at all.
    BATCH,
}

/// SLO specification; `slack_factor` >= 1 relaxes REALTIME pacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloSpec {
    pub mode: SloMode,
    #[serde(default)]
    pub ttff_target: f64,
    #[serde(default)]
    pub absolute_deadline: f64,
    #[serde(default = "one")]
    pub slack_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl SloSpec {
    pub fn realtime(ttff_target: f64) -> Self {
        SloSpec {
            mode: SloMode::REALTIME,
            ttff_target,
            absolute_deadline: 0.0,
            slack_factor: 1.0,
        }
    }

    pub fn relaxed(ttff_target: f64, slack: f64) -> Self {
        SloSpec {
            slack_factor: slack,
            ..Self::realtime(ttff_target)
        }
    }

    pub fn deadline(at: f64) -> Self {
        SloSpec {
            mode: SloMode::DEADLINE,
            ttff_target: 0.0,
            absolute_deadline: at,
            slack_factor: 1.0,
        }
    }

    pub fn batch() -> Self {
        SloSpec {
            mode: SloMode::BATCH,
            ttff_target: 0.0,
            absolute_deadline: 0.0,
            slack_factor: 1.0,
        }
    }

    /// TTFF target after relaxation.
    pub fn effective_ttff(&self) -> f64 {
        self.ttff_target * self.slack_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.slack_factor < 1.0 {
            return Err(Error::config("slack_factor must be >= 1"));
        }
        if self.mode == SloMode::REALTIME && self.ttff_target <= 0.0 {
            return Err(Error::config("REALTIME requires a positive ttff_target"));
        }
        Ok(())
    }
}

/// One generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestSpec {
    pub workflow_kind: WorkflowKind,
    /// Seconds of output video.
    pub duration: f64,
    pub target_fps: f64,
    pub target_quality: QualityConfig,
    pub slo: SloSpec,
    /// Simulation time the request is submitted.
    pub submit_time: f64,
    #[serde(default)]
    pub params: WorkflowParams,
}

impl RequestSpec {
    pub fn validate(&self) -> Result<()> {
        if self.duration <= 0.0 {
            return Err(Error::config("duration must be positive"));
        }
        if self.target_fps <= 0.0 {
            return Err(Error::config("target_fps must be positive"));
        }
        self.slo.validate()?;
        self.target_quality.validate()
    }
}

/// Pipeline stage of a DAG node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    SCREENPLAY,
    TTS,
    BASE_IMAGE,
    CROP_IMAGE,
    VIDEO_DIT,
    VIDEO_VAE,
    AV_SYNC,
    UPSCALE,
    STITCH,
    STATIC_ASSET,
}

impl Stage {
    /// Model class required to execute the stage; `None` runs on the
    /// orchestrator itself at negligible cost.
    pub fn task_class(self) -> Option<TaskClass> {
        match self {
            Stage::SCREENPLAY => Some(TaskClass::LLM),
            Stage::TTS => Some(TaskClass::TTS),
            Stage::BASE_IMAGE => Some(TaskClass::T2I),
            Stage::CROP_IMAGE => Some(TaskClass::I2I),
            Stage::VIDEO_DIT | Stage::VIDEO_VAE => Some(TaskClass::I2V),
            Stage::AV_SYNC => Some(TaskClass::VplusA),
            Stage::UPSCALE => Some(TaskClass::UPSCALE),
            Stage::STITCH | Stage::STATIC_ASSET => None,
        }
    }

    /// Whether this stage's completions emit frames onto the output timeline.
    pub fn emits_frames(self) -> bool {
        matches!(self, Stage::AV_SYNC | Stage::UPSCALE | Stage::STATIC_ASSET)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::SCREENPLAY => "SCREENPLAY",
            Stage::TTS => "TTS",
            Stage::BASE_IMAGE => "BASE_IMAGE",
            Stage::CROP_IMAGE => "CROP_IMAGE",
            Stage::VIDEO_DIT => "VIDEO_DIT",
            Stage::VIDEO_VAE => "VIDEO_VAE",
            Stage::AV_SYNC => "AV_SYNC",
            Stage::UPSCALE => "UPSCALE",
            Stage::STITCH => "STITCH",
            Stage::STATIC_ASSET => "STATIC_ASSET",
        }
    }
}

pub type NodeId = u32;

/// One task in the workflow DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub id: NodeId,
    pub stage: Stage,
    pub scene_index: u32,
    pub shot_index: u32,
    /// AV-sync segment index within the shot.
    pub segment_index: u32,
    pub quality: QualityConfig,
    /// Start/end seconds within the output timeline.
    pub content_span: (f64, f64),
    /// Absolute completion deadline, simulation seconds.
    pub deadline: f64,
    /// Transfer size of the node's output, bytes.
    pub output_bytes: f64,
    pub cacheable_key: Option<u64>,
}

impl DagNode {
    pub fn span_seconds(&self) -> f64 {
        self.content_span.1 - self.content_span.0
    }
}

/// Request-level facts the builder needs to refine a sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagMeta {
    pub kind: WorkflowKind,
    pub duration: f64,
    pub fps: f64,
    pub submit_time: f64,
    pub target_level: QualityLevel,
    pub slo: SloSpec,
    pub upscale_enabled: bool,
    pub monolithic: bool,
}

/// Immutable DAG snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDag {
    pub nodes: Vec<DagNode>,
    /// (from, to) dependency pairs.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Placeholders pending screenplay output.
    pub sketch: bool,
    pub meta: DagMeta,
    #[serde(skip)]
    preds: Vec<Vec<NodeId>>,
    #[serde(skip)]
    succs: Vec<Vec<NodeId>>,
}

impl WorkflowDag {
    pub fn new(nodes: Vec<DagNode>, edges: Vec<(NodeId, NodeId)>, sketch: bool, meta: DagMeta) -> Self {
        let mut dag = WorkflowDag {
            nodes,
            edges,
            sketch,
            meta,
            preds: Vec::new(),
            succs: Vec::new(),
        };
        dag.rebuild_adjacency();
        dag
    }

    pub fn rebuild_adjacency(&mut self) {
        let n = self.nodes.len();
        self.preds = vec![Vec::new(); n];
        self.succs = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            self.succs[a as usize].push(b);
            self.preds[b as usize].push(a);
        }
    }

    pub fn preds(&self, id: NodeId) -> &[NodeId] {
        &self.preds[id as usize]
    }

    pub fn succs(&self, id: NodeId) -> &[NodeId] {
        &self.succs[id as usize]
    }

    pub fn node(&self, id: NodeId) -> &DagNode {
        &self.nodes[id as usize]
    }

    /// Kahn topological order; `CycleDetected` if none exists.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indeg: Vec<u32> = (0..n).map(|i| self.preds[i].len() as u32).collect();
        let mut queue: Vec<NodeId> = (0..n as NodeId).filter(|&i| indeg[i as usize] == 0).collect();
        let mut order = Vec::with_capacity(n);
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            order.push(u);
            for &v in &self.succs[u as usize] {
                indeg[v as usize] -= 1;
                if indeg[v as usize] == 0 {
                    queue.push(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::CycleDetected);
        }
        Ok(order)
    }

    pub fn stitch_node(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.stage == Stage::STITCH).map(|n| n.id)
    }

    pub fn validate(&self) -> Result<()> {
        self.topo_order()?;
        let stitches = self.nodes.iter().filter(|n| n.stage == Stage::STITCH).count();
        if stitches != 1 {
            return Err(Error::config(format!("expected one STITCH sink, found {stitches}")));
        }
        for n in &self.nodes {
            if n.stage != Stage::SCREENPLAY && n.stage != Stage::STITCH
                && n.content_span.1 <= n.content_span.0
            {
                return Err(Error::config(format!(
                    "node {} has an empty content span",
                    n.id
                )));
            }
        }
        Ok(())
    }

    /// Export to a Graphviz dot description for inspection.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("digraph workflow {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "  n{} [label=\"{} s{}.{}.{}\\n[{:.1},{:.1})\"];",
                n.id,
                n.stage.name(),
                n.scene_index,
                n.shot_index,
                n.segment_index,
                n.content_span.0,
                n.content_span.1
            );
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }
}
