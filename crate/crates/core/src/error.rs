use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid vector in record {image_id}: {detail}")]
    InvalidVector { image_id: String, detail: String },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("duplicate image id {0}")]
    DuplicateId(String),

    #[error("class {0} has no display name")]
    UnknownClass(u32),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("non-finite value during sinkhorn iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("missing correspondence map for pair ({query}, {gallery})")]
    MissingCorrespondence { query: String, gallery: String },

    #[error("correspondence/mask mismatch: {0}")]
    CorrespondenceMismatch(String),

    #[error("no visible keypoints for query {0}")]
    NoVisibleKeypoints(String),

    #[error("image {width}x{height} too small for {scales} scales (need at least {min}x{min})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        scales: usize,
        min: usize,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
