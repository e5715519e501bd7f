//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("{gpus} GPUs do not divide the {heads} attention heads of model {model}")]
    IncompatibleParallelism { model: String, heads: u32, gpus: u32 },

    #[error("resolution {width}x{height} violates the {compression}x VAE compression of model {model}")]
    UnsupportedResolution {
        model: String,
        width: u32,
        height: u32,
        compression: u32,
    },

    #[error("unknown SKU: {0}")]
    UnknownSku(String),

    #[error("unknown model: {0}")]
    UnknownModel(String),

    #[error("unknown region: {0}")]
    UnknownRegion(String),

    #[error("not enough benchmark points: {got} (need {need})")]
    InsufficientPoints { got: usize, need: usize },

    #[error("degenerate benchmark design: {0}")]
    DegenerateDesign(String),

    #[error("no model in the catalog covers stage {0}")]
    UncoverableStage(String),

    #[error("enumeration would visit {candidates} candidates (limit {limit})")]
    InstanceTooLarge { candidates: u64, limit: u64 },

    #[error("workflow DAG contains a cycle")]
    CycleDetected,

    #[error("screenplay spans overlap at {0:.3}s")]
    SpanOverlap(f64),

    #[error("screenplay spans leave a gap at {0:.3}s")]
    SpanGap(f64),

    #[error("no compatible instance for stage {0}")]
    NoCompatibleInstance(String),

    #[error("task of class {task} incompatible with instance serving {model}")]
    IncompatibleTask { task: String, model: String },

    #[error("no valid resolution near {width}x{height} for model {model}")]
    NoValidResolution { model: String, width: u32, height: u32 },

    #[error("unsupported workflow kind: {0}")]
    UnsupportedWorkflowKind(String),

    #[error("provision plan is infeasible: {0}")]
    InfeasiblePlan(String),

    #[error("unsupported report format: {0}")]
    UnsupportedFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid catalog entry {entry}: {reason}")]
    InvalidCatalog { entry: String, reason: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
