use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: output would be empty: {detail}")]
    EmptyOutput { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    NotDivisible { op: &'static str, detail: String },

    #[error("backward: loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    DanglingNode(usize),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("image `{image}`: missing landmark `{landmark}`")]
    MissingLandmark { image: String, landmark: String },

    #[error("unknown landmark `{0}`")]
    UnknownLandmark(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("no checkpoint available")]
    NoCheckpoint,

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("inconsistent landmark sets: {0}")]
    InconsistentLandmarks(String),

    #[error("coverage mismatch: image `{image}`, annotator `{annotator}`, landmark `{landmark}`")]
    CoverageMismatch {
        image: String,
        annotator: String,
        landmark: String,
    },

    #[error("invalid pixel spacing ({0}, {1}): both components must be positive and finite")]
    InvalidSpacing(f64, f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
