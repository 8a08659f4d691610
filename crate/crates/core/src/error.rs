use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A map iterate left the finite range while clamping was disabled.
    #[error("map orbit overflowed at iterate {index}")]
    Overflow { index: u64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation needs state (fitted statistics, trained weights) that is missing.
    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while parsing IDX files. Each variant names the file and, where it
/// applies, the byte offset at which parsing stopped.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{}: expected {kind} magic {expected} at offset 0, found {found}", path.display())]
    BadMagic {
        path: PathBuf,
        kind: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("{}: truncated at offset {offset} (needed {needed} more bytes)", path.display())]
    Truncated {
        path: PathBuf,
        offset: u64,
        needed: u64,
    },

    #[error("item count mismatch: {images} images in {}, {labels} labels in {}", images_path.display(), labels_path.display())]
    CountMismatch {
        images_path: PathBuf,
        images: usize,
        labels_path: PathBuf,
        labels: usize,
    },

    #[error("{}: unsupported image dimensions {rows}x{cols}", path.display())]
    Dimensions { path: PathBuf, rows: u32, cols: u32 },

    #[error("{}: label {value} at offset {offset} is not a digit", path.display())]
    BadLabel {
        path: PathBuf,
        offset: u64,
        value: u8,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
