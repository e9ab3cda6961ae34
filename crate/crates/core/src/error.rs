use std::path::PathBuf;

use crate::taxonomy::Attribute;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: malformed file: {context}")]
    MalformedFile { path: PathBuf, context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown privacy attribute `{0}`")]
    UnknownAttribute(String),

    #[error("geometry out of image bounds: {0}")]
    OutOfBoundsGeometry(String),

    #[error("degenerate polygon with {vertices} vertices (need at least 3)")]
    DegenerateGeometry { vertices: usize },

    #[error("run lengths sum to {actual}, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("operation requires a nonempty mask")]
    EmptyMask,

    #[error("score {0} outside [0, 1]")]
    InvalidScore(f32),

    #[error("superpixel target {target} exceeds pixel count {pixels}")]
    TargetTooLarge { target: usize, pixels: usize },

    #[error("ground-truth mask is empty")]
    EmptyGroundTruth,

    #[error("superpixel labeling does not match mask: {0}")]
    InconsistentSubstrate(String),

    #[error("no ground truth for attribute `{0}`")]
    NoGroundTruth(Attribute),

    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("external class `{0}` has no mapping")]
    UnknownMappingClass(String),

    #[error("missing prediction for image `{image_id}`, attribute `{attribute}`")]
    MissingPrediction { image_id: String, attribute: Attribute },

    #[error("annotation sets cover different images: {0}")]
    ImageSetMismatch(String),

    #[error("task has no responses")]
    NoResponses,

    #[error("cannot aggregate an empty set")]
    EmptySet,

    #[error("baseline AUC is zero")]
    ZeroBaseline,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, context: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            context: context.into(),
        }
    }
}
