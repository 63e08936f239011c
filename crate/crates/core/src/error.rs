use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("noise horizon exhausted: requested time {requested} but usable range is [{min}, {max}]")]
    HorizonExhausted { requested: f64, min: f64, max: f64 },

    #[error("time {t} is not a multiple of the noise step dt = {dt}")]
    OffGridTime { t: f64, dt: f64 },

    #[error("numerical blowup: non-finite state at t = {t} (component {component})")]
    Blowup { t: f64, component: usize },

    #[error("point {point:?} lies outside the window and the grid has no exterior box")]
    OutOfWindow { point: Vec<f64> },

    #[error("box set belongs to a different grid")]
    GridMismatch,

    #[error("inconsistent box maps: {0}")]
    InconsistentMaps(String),

    #[error("parameter constraint violated: {0}")]
    ParameterConstraint(String),

    #[error("backward integration is not available for this system: {0}")]
    NotInvertible(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("bad dump format: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
