//! Synthetic classification tasks with known nuisance transformations, and
//! the BLVT tensor container.

mod blobs;
mod blvt;
mod glyphs;
mod task;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::vision::VisionError;

pub use blobs::{gen_hue_shifted_blobs, render_blob};
pub use blvt::{
    decode_tensors, encode_tensors, load_tensors, save_tensors, BLVT_MAGIC, BLVT_VERSION,
};
pub use glyphs::{gen_translated_glyphs, render_glyph, shift_image};
pub use task::{
    generate, write_manifest, Dataset, Manifest, SampleMeta, SyntheticTaskSpec, TaskKind,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Vision(#[from] VisionError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("glyph does not fit: {0}")]
    GlyphOutOfBounds(String),

    #[error("invalid task spec: {0}")]
    Spec(String),

    #[error("bad BLVT file: {0}")]
    Format(String),

    #[error("BLVT version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
