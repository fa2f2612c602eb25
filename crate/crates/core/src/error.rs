use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bounding box ({x_min}, {y_min}, {x_max}, {y_max}): area must be positive")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("image extent {width}x{height} is below the 16x16 minimum")]
    ExtentTooSmall { width: u32, height: u32 },

    #[error("box {bbox} lies outside the {width}x{height} image")]
    BoxOutsideImage {
        bbox: String,
        width: u32,
        height: u32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("episode already finished; reset before stepping again")]
    EpisodeFinished,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite loss {loss} after update {update} (max |target| {max_target})")]
    NonFiniteLoss {
        loss: f64,
        update: u64,
        max_target: f64,
    },

    #[error("empty description in regular query mode")]
    EmptyDescription,

    #[error("cannot sample from an empty replay buffer")]
    EmptyReplay,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("scene generation failed for seed {seed} after {attempts} attempts")]
    InfeasiblePlacement { seed: u64, attempts: usize },

    #[error("no precomputed features for scene `{0}`")]
    MissingFeatures(String),

    #[error("search horizon {0} exceeds the maximum of 6")]
    HorizonTooLarge(usize),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image file `{path}`: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
