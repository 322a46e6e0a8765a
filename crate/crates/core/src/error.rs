use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite or out-of-domain input: {0}")]
    Domain(String),
    #[error("division model denominator vanishes at r_d = {r_d}")]
    Singularity { r_d: f64 },
    #[error("target radius {r_u} is not attainable within the search bracket")]
    OutOfRange { r_u: f64 },
    #[error("radial model is not monotone on [0, {r_max}]")]
    NotMonotone { r_max: f64 },
    #[error("invalid radial model: {0}")]
    InvalidModel(String),
    #[error("no monotone model found after {attempts} attempts")]
    SamplingFailed { attempts: usize },
    #[error("flow generation failed at pixel ({x}, {y}): {source}")]
    FlowGeneration {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("least-squares fit failed: {0}")]
    FitFailed(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
