use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("field of view {fov_microns} µm at {mpp} mpp is smaller than one pixel")]
    FovTooSmall { fov_microns: f64, mpp: f64 },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid slide manifest: {0}")]
    InvalidManifest(String),
    #[error("dataset has a single class ({0}); at least two are required")]
    SingleClass(String),
    #[error("manifest already exists at {0} (use overwrite to replace it)")]
    ManifestExists(PathBuf),
    #[error("invalid transform `{name}`: {reason}")]
    InvalidTransform { name: String, reason: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("non-finite loss at epoch {epoch} step {step}: total {total}, invariance {invariance}, redundancy {redundancy}")]
    NonFiniteLoss { epoch: usize, step: usize, total: f64, invariance: f64, redundancy: f64 },
    #[error("unknown encoder family `{0}`")]
    UnknownEncoder(String),
    #[error("missing weights file {0}")]
    MissingWeights(PathBuf),
    #[error("classes lacking samples: {0}")]
    DeficientClasses(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("tile {tile} lies outside the thumbnail")]
    CoordOutOfBounds { tile: String },
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("unlabeled data: {0}")]
    Unlabeled(String),
    #[error(transparent)]
    Nn(#[from] pathbt_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
