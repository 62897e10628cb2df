use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation for this backend: {0}")]
    Unsupported(String),

    #[error("flow blew up at t = {time}: max|u| = {max_abs} exceeds cap {cap}")]
    BlowUp { time: f64, max_abs: f64, cap: f64 },

    #[error("time step underflow at t = {time}: dt = {dt} below minimum {min_dt}")]
    CflViolation { time: f64, dt: f64, min_dt: f64 },

    #[error("kernel mass drift {drift:e} at s = {s} exceeds tolerance {tol:e}")]
    MassDrift { s: f64, drift: f64, tol: f64 },

    #[error("kernel became negative ({value:e}) at s = {s}")]
    Negativity { s: f64, value: f64 },

    #[error("density is not normalizable (mass = {0})")]
    NotNormalizable(f64),

    #[error("time {0} is not on the history grid")]
    OffGrid(f64),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
