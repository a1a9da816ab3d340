use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("not a tensor file (bad magic)")]
    BadMagic,

    #[error("malformed tensor header: {0}")]
    BadHeader(String),

    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("value out of range: {0}")]
    ValueOutOfRange(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for {len} prompts")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("prompt set is empty")]
    EmptyPromptSet,

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("zero-sized dimension")]
    ZeroDimension,

    #[error("requested {requested} segments for an image of {pixels} pixels")]
    TooManySegments { requested: usize, pixels: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("pair `{0}` has no ground truth")]
    MissingGroundTruth(String),

    #[error("invalid scene spec: {0}")]
    SpecInvalid(String),

    #[error("image decode failed: {0}")]
    Image(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error originates from input data rather than from usage
    /// or from an internal bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::UnknownClass(_))
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
