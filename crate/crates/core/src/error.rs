use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph needs at least 2 nodes, got {0}")]
    DegenerateGraph(usize),

    #[error("invalid scattering center {index}: {reason}")]
    InvalidCenter { index: usize, reason: String },

    #[error("alpha value {0} is not in the codebook")]
    UnknownAlpha(f64),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("segment id {id} out of range for {count} segments")]
    SegmentOutOfRange { id: usize, count: usize },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("matrix size {size} exceeds eigensolver cap {cap}")]
    MatrixTooLarge { size: usize, cap: usize },

    #[error("jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("objective is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("walk statistics were built for {stats} nodes, graph has {graph}")]
    WalkMismatch { stats: usize, graph: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter {0}")]
    MissingParam(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid template {name}: {reason}")]
    InvalidTemplate { name: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
