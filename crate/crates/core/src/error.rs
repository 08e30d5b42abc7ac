use thiserror::Error;

use crate::raster::BBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("box {bbox:?} lies outside the {width}x{height} image")]
    OutOfBounds { bbox: BBox, width: u32, height: u32 },

    #[error("invalid raster dimensions {0}x{1}")]
    InvalidDimensions(u32, u32),

    #[error("pixel buffer holds {got} values, expected {expected}")]
    PixelCount { expected: usize, got: usize },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{record}: {message}")]
    Record { record: String, message: String },

    #[error("legend-parser: the legend table has no usable rows")]
    EmptyTable,

    #[error("legend-locator: no legend table found")]
    TableNotFound,

    #[error("classification needs at least one template")]
    NoTemplates,

    #[error("embedding length mismatch: expected {expected}, got {got}")]
    EmbeddingLength { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("glyph library holds {available} glyphs but {requested} were requested")]
    GlyphLibrary { requested: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Process exit status for command-line use: 1 input/output, 2 no
    /// table, 3 empty table, 4 invalid configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TableNotFound => 2,
            Error::EmptyTable => 3,
            Error::Config(_) | Error::GlyphLibrary { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn record(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Record {
            record: record.into(),
            message: message.into(),
        }
    }
}
