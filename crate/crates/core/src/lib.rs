//! Deterministic discrete-event simulator and decision engine for serving
//! real-time multi-modal generation workflows.
//!
//! The crate models, at desk scale, a serving stack for workflows that chain
//! language, speech, image, video, and audio-sync models under real-time
//! deadlines:
//!
//! - [`catalog`] — model/hardware catalogs and calibrated latency, power,
//!   energy, and cost estimators.
//! - [`workflow`] — generation DAGs, per-node deadlines, and the TTFF/TBF
//!   streaming math.
//! - [`provisioner`] — cost x TTFF provisioning: greedy seeding, hill-climb
//!   refinement, spot over-provisioning, and an exhaustive oracle.
//! - [`scheduler`] — deadline-ordered dispatch, adaptive quality, model
//!   constraints, caching, and eviction handling.
//! - [`simcore`] — the event engine, instance lifecycle, metrics, and
//!   reports.

pub mod catalog;
pub mod error;
pub mod provisioner;
pub mod rng;
pub mod scheduler;
pub mod simcore;
pub mod workflow;

pub use catalog::{
    Catalog, FrequencyModel, FrequencySetting, HardwareSku, LatencyBreakdown, ModelProfile,
    QualityConfig, QualityLevel, RegionGraph, StageSet, TaskClass,
};
pub use error::{Error, Result};
pub use provisioner::{InstanceGroup, ObjectiveSpec, PlanComponent, ProvisionPlan};
pub use simcore::{SimTrace, WorkloadSpec};
pub use workflow::{DagNode, RequestSpec, SloMode, SloSpec, Stage, WorkflowDag, WorkflowKind};
