use std::path::PathBuf;

/// Errors produced anywhere in the refinement pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate pose: wrist and anchor are {distance} px apart (tolerance {tolerance})")]
    DegeneratePose { distance: f64, tolerance: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("vertex {index} is behind the camera (z = {z})")]
    BehindCamera { index: usize, z: f64 },

    #[error("guidance map has no nonzero pixels; cannot locate a hand")]
    EmptyGuidance,

    #[error("inpainting mask covers zero pixels")]
    EmptyMask,

    #[error("no hand detected by the double check gate")]
    NoHandDetected,

    #[error("aligned guidance fell entirely outside the frame")]
    OffFrame,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }
}
