use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every subsystem in the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("pixel ({u}, {v}) out of bounds for {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: usize, height: usize },

    #[error("invalid sample interval: t0 = {t0}, t1 = {t1}")]
    InvalidInterval { t0: f64, t1: f64 },

    #[error("image embedding id {phi_id} out of range (table has {table_len} rows)")]
    PhiOutOfRange { phi_id: usize, table_len: usize },

    #[error("{0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {file}: {message}")]
    Parse { file: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
