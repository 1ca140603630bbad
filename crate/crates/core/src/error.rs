use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },

    #[error("{path}: i/o error: {error}")]
    Io { path: PathBuf, error: std::io::Error },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: non-grayscale payload ({format})")]
    NonGrayscale { path: PathBuf, format: String },

    #[error("{path}: unsupported bit depth (maxval {maxval})")]
    UnsupportedBitDepth { path: PathBuf, maxval: u32 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid IRMA code {code:?}: {reason}")]
    InvalidIrmaCode { code: String, reason: String },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("classes exceed grid: {classes} classes but only {blocks} block positions")]
    ClassesExceedGrid { classes: usize, blocks: usize },

    #[error("image {width}x{height} too small for a {k}x{k} grid (blocks must be at least 3x3)")]
    ImageTooSmall { width: usize, height: usize, k: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("p must be < n (n = {n}, p = {p})")]
    NoCompression { n: usize, p: usize },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("class {class} out of range (class count {classes})")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Format(String),

    #[error("{path}: config error: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{path}: artifact version {found} does not match supported version {expected}")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{stage}: {inner}")]
    Stage { stage: &'static str, inner: Box<Error> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, error: source }
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            inner: Box::new(self),
        }
    }
}
