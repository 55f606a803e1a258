use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),
    #[error("category {category} out of range 1..={max}")]
    CategoryOutOfRange { category: u32, max: u16 },
    #[error("instance id {instance_id} does not fit below stride {stride}")]
    InstanceIdOverflow { instance_id: u32, stride: u32 },
    #[error("stuff category {category} cannot carry instance id {instance_id}")]
    StuffWithNonzeroInstance { category: u16, instance_id: u32 },
    #[error("malformed label {0}")]
    MalformedLabel(u32),
    #[error("invalid segment label {label} at ({row}, {col})")]
    InvalidSegmentLabel { label: u32, row: usize, col: usize },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("grid of {height}x{width} needs {expected} values, got {actual}")]
    BadGridLength { height: usize, width: usize, expected: usize, actual: usize },
    #[error("edge width must be at least 1, got {0}")]
    InvalidEdgeWidth(u32),
    #[error("recursions must be 1 or 2, got {0}")]
    InvalidRecursions(usize),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("no center for instance {label}")]
    MissingCenter { label: u32 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("finite-difference step must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("loss component {name} is negative or not finite: {value}")]
    NegativeComponent { name: &'static str, value: f64 },
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid fusion parameters: {0}")]
    InvalidFusionParams(String),
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("taxonomy mismatch between prediction and ground truth")]
    TaxonomyMismatch,
    #[error("infeasible synthesis parameters: {0}")]
    InfeasibleParams(String),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("dimension overflow: {0}")]
    DimOverflow(String),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("unexpected tensor: {0}")]
    UnexpectedTensor(String),
    #[error("label {0} does not fit in 16 bits")]
    LabelOverflow(u32),
    #[error("source id {0} missing from translation table")]
    UnknownSourceId(u32),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}
