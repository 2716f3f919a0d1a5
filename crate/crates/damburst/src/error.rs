use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported image format{}", .0.as_ref().map(|f| format!(": {f}")).unwrap_or_default())]
    UnsupportedFormat(Option<String>),
    #[error("zero-dimension image")]
    ZeroDimension,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rectangle lies entirely outside the image")]
    RectOutsideImage,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("region {0} is not alive")]
    DeadRegion(u32),
    #[error("unknown region id {0}")]
    UnknownRegion(u32),
    #[error("regions {0} and {1} are not adjacent")]
    NotAdjacent(u32, u32),
    #[error("malformed label map: {0}")]
    BadLabelMap(String),
    #[error("merge log replay failed at record {index}: {reason}")]
    ReplayMismatch { index: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
