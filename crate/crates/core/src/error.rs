use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("angle {index} = {value} outside its allowed range")]
    AngleOutOfRange { index: usize, value: f64 },

    #[error("vector is not unit norm (norm = {0})")]
    NotUnit(f64),

    #[error("degenerate coordinates: prefix sum of squares {0:e} too small to invert")]
    DegenerateCoordinate(f64),

    #[error("singular hyperspherical coordinates: partial sum of squares {0:e} below threshold")]
    SingularCoordinate(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("unsupported chain file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
