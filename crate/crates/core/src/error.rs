use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("degenerate marginal at t = {t}: smallest covariance eigenvalue {min_eigenvalue:e} (trace {trace:e})")]
    DegenerateMarginal {
        t: f64,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("low density: effective sample size {effective_n:.3} below floor {floor}")]
    LowDensity { effective_n: f64, floor: f64 },

    #[error("inconsistent moments: Reynolds tensor eigenvalue {min_eigenvalue:e} below tolerance (trace {trace:e})")]
    InconsistentMoments { min_eigenvalue: f64, trace: f64 },

    #[error("trajectory left the support at t = {t}: {reason}")]
    LeftSupport { t: f64, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ensemble file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
