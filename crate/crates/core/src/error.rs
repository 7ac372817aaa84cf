use thiserror::Error;

use crate::layout::{GridCell, PartId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown layout kind `{0}` (expected face_swap or facial_parts)")]
    UnknownLayoutKind(String),
    #[error("part id {part} out of range 1..={num_parts}")]
    PartOutOfRange { part: PartId, num_parts: usize },
    #[error("cell {cell} outside the {height}x{width} grid")]
    CellOutOfRange {
        cell: GridCell,
        height: usize,
        width: usize,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("unsupported layer: {0}")]
    UnsupportedLayer(String),
    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
