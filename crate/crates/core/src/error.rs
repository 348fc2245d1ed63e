use std::path::PathBuf;

use thiserror::Error;

/// Side of a rectangle that falls outside its host image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Top,
    Right,
    Bottom,
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Edge::Top => f.write_str("top"),
            Edge::Right => f.write_str("right"),
            Edge::Bottom => f.write_str("bottom"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{edge} edge out of bounds: {extent} exceeds image {limit}")]
    OutOfBounds { edge: Edge, extent: usize, limit: usize },

    #[error("invalid dimensions: {0}")]
    Size(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("insufficient support: need at least {needed} points, got {got}")]
    InsufficientSupport { needed: usize, got: usize },

    #[error("failed to ingest {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
