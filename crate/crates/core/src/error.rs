use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
///
/// Everything except [`Error::Io`] is a validation failure: the input was
/// readable but violates a format or domain rule.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("unknown class name {0:?}")]
    UnknownClass(String),

    #[error("unknown model id {0:?}")]
    UnknownModel(String),

    #[error("class id {id} out of range (K = {classes})")]
    ClassOutOfRange { id: usize, classes: usize },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("invalid RLE: {0}")]
    Rle(String),

    #[error("invalid masklet file: {0}")]
    Masklet(String),

    #[error("invalid ground truth: {0}")]
    GroundTruth(String),

    #[error("instances overlap at pixel ({x},{y})")]
    InstanceOverlap { x: usize, y: usize },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid merge policy: {0}")]
    Policy(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("fixture generation failed: {0}")]
    Fixture(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for failures to read or write the filesystem, as opposed to
    /// content that failed validation.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        });
    }
    Ok(())
}
