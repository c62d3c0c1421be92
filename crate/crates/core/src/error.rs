use thiserror::Error;

#[derive(Debug, Error)]
pub enum NskError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("size mismatch: expected {expected} samples, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("parity flag missing")]
    MissingParity,

    #[error("parity conflict: {0}")]
    ParityConflict(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nonpositive density (min = {min})")]
    NonpositiveDensity { min: f64 },

    #[error("vacuum: min density {min_rho:.3e} below floor at t = {time}")]
    Vacuum { min_rho: f64, time: f64 },

    #[error("time step {dt:.3e} exceeds advective limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = NskError> = std::result::Result<T, E>;
