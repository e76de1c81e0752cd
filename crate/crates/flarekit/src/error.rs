//! Error types shared across the toolkit.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("png decode error: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode error: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid depth map: {0}")]
    InvalidDepth(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    /// The thresholded light-source region is empty; signals the affine retry path.
    #[error("empty light-source region")]
    EmptySourceRegion,

    #[error("evaluation mask has no included pixels")]
    EmptyMask,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid flare recipe: {0}")]
    InvalidRecipe(String),

    /// Every flare of a synthesis attempt was skipped by the visibility retry rule.
    #[error("synthesis skipped: no flare satisfied the visibility rule")]
    SynthesisSkipped,

    #[error("template batch index {index} failed: {reason}")]
    BatchIndexFailed { index: u64, reason: String },

    #[error("no matched prediction/ground-truth pairs found")]
    NoMatchedPairs,

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Internal(String),
}
