use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space construction: {0}")]
    InvalidSpace(String),

    #[error("space has no metric")]
    MissingMetric,

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("map is undefined on element {index} ({label})")]
    PartialMap { index: usize, label: String },

    #[error("invalid correspondence parameters: {0}")]
    InvalidCorrespondence(String),

    #[error("generator arrow {arrow} is not surjective: target element {target} ({label}) has no preimage")]
    NonSurjectiveArrow {
        arrow: usize,
        target: usize,
        label: String,
    },

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("restriction orphans vertex {vertex} ({label}) in layer {layer}: no in-neighbor kept")]
    OrphanedVertex {
        layer: usize,
        vertex: usize,
        label: String,
    },

    #[error("group action is not free: element {witness} is fixed by a non-identity element")]
    NonFreeAction { witness: String },

    #[error("group action is not total on layer {layer}: {witness} leaves the space")]
    PartialAction { layer: usize, witness: String },

    #[error("group action breaks edges: {witness}")]
    EdgeBreakingAction { witness: String },

    #[error("invalid convolutional structure: {0}")]
    InvalidStructure(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("simplex normalization requires a positive sum, got {sum}")]
    NonPositiveSum { sum: f64 },

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid cover: length {l} must exceed stride {s} and both must be positive")]
    InvalidCover { l: f64, s: f64 },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("invalid point cloud: {0}")]
    InvalidPointCloud(String),

    #[error("codensity parameter k={k} out of range for {n} points (need 1 <= k < n)")]
    CodensityRange { k: usize, n: usize },

    #[error("instance too large: {what} count {count} exceeds cap {cap}")]
    ResourceLimit {
        what: &'static str,
        count: usize,
        cap: usize,
    },

    #[error("bad magic number in {path}: expected {expected}, got {got}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    #[error("truncated file {path}: needed {needed} bytes, got {got}")]
    Truncated {
        path: String,
        needed: usize,
        got: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("network spec error: {0}")]
    InvalidSpec(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI for exit codes:
/// 1 validation, 2 runtime/resource, 3 I/O.
impl Error {
    pub fn exit_class(&self) -> i32 {
        use Error::*;
        match self {
            Io(_) | MissingFile(_) | Truncated { .. } => 3,
            Divergence { .. } | ResourceLimit { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
