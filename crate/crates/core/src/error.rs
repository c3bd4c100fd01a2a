use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SigilError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SigilError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },

    #[error("non-finite output from {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    NotScalar(usize, usize),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{path}:{line}: node index out of range: {index} >= {n}")]
    NodeOutOfRange { path: PathBuf, line: usize, index: usize, n: usize },

    #[error("{path}: feature row count {found} != node count {expected}")]
    FeatureRows { path: PathBuf, expected: usize, found: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("similarity map row {node} sums to zero (isolated node with no assignment mass)")]
    ZeroDegree { node: usize },

    #[error("insufficient nodes for {what}: need {needed}, have {available}")]
    InsufficientNodes { what: &'static str, needed: usize, available: usize },

    #[error("clustering contrastive loss needs at least two clusters")]
    SingleCluster,

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("training diverged at iteration {iteration}: objective is {value}")]
    Diverged { iteration: usize, value: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint truncated")]
    Truncated,

    #[error("checkpoint checksum mismatch")]
    Corrupt,

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

impl SigilError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SigilError::Io { path: path.into(), source }
    }
}
