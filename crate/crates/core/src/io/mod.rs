//! File formats: binary PGM images and stack directories.
//!
//! A stack directory holds `meta.json` plus one raw little-endian u16 file
//! per slice (`slice_00000.bin`, ...). `meta.json` is the single source of
//! truth for array shapes; readers never infer a shape from file sizes and
//! fail loudly when the two disagree.

pub mod octv;
pub mod pgm;
pub mod surface_map;

use std::path::PathBuf;

use thiserror::Error;

pub use octv::{read_stack, read_volume, write_stack, write_volume, CylinderMeta, StackMeta};
pub use pgm::{read_mask, read_pgm, write_mask, write_pgm_u16, write_pgm_u8, PgmImage};
pub use surface_map::{read_surface_map, write_surface_map};

/// Errors for every reader/writer in this module tree.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing slice file {path} (slice index {index})")]
    MissingSlice { index: usize, path: PathBuf },

    #[error("slice {index}: expected {expected} bytes, found {found}")]
    SliceSize { index: usize, expected: u64, found: u64 },

    #[error("unsupported dtype {found:?} (this reader handles \"u16le\")")]
    Dtype { found: String },

    #[error("unsupported container format tag {found:?}")]
    FormatTag { found: String },

    #[error("invalid metadata: {0}")]
    Meta(String),

    #[error("{path}: not a binary PGM ({detail})")]
    Pgm { path: PathBuf, detail: String },

    #[error("image shape {found_w}x{found_h} does not match metadata {want_w}x{want_h}")]
    Shape { want_w: usize, want_h: usize, found_w: usize, found_h: usize },

    #[error("value {value} at ({x}, {y}) exceeds the 16-bit sample range")]
    Range { x: usize, y: usize, value: f64 },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
