use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DaamError>;

#[derive(Debug, Error)]
pub enum DaamError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("manifest schema violation: {0}")]
    SchemaViolation(String),
    #[error("manifest invariant violated: {0}")]
    InvariantViolation(String),
    #[error("slice {layer_id}@{timestep} is not available: {reason}")]
    MissingSlice {
        layer_id: String,
        timestep: i64,
        reason: String,
    },
    #[error("bad .attn header in {path}: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {value} at cell ({row}, {col}), token {token} is outside [0, 1]")]
    ValueRangeViolation {
        row: usize,
        col: usize,
        token: usize,
        value: f32,
    },
    #[error("token scores at cell ({row}, {col}) sum to {sum}, expected 1 within {tolerance}")]
    RowSumViolation {
        row: usize,
        col: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("upscale of {slice_dim} cells by stride {stride} cannot produce {target} pixels")]
    ShapeOverflow {
        slice_dim: usize,
        stride: usize,
        target: usize,
    },
    #[error("invalid upscale spec: {0}")]
    InvalidSpec(String),
    #[error("layer filter selects no layers")]
    EmptySelection,
    #[error("unknown word: {0}")]
    UnknownWord(String),
    #[error("token index {index} out of range for context length {len}")]
    UnknownToken { index: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("no prediction/ground-truth pair survived the class restriction")]
    EmptyEvaluation,
    #[error("value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid overlay spec: {0}")]
    InvalidOverlay(String),
    #[error("invalid annotations: {0}")]
    Annotation(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DaamError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DaamError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DaamError::EmptyEvaluation => 2,
            DaamError::Usage(_) => 64,
            _ => 1,
        }
    }
}
