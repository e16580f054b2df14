use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed examination history: {0}")]
    MalformedHistory(String),

    #[error("invalid examination times: {0}")]
    InvalidTimes(String),

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid sampling design: {0}")]
    InvalidDesign(String),

    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("time {t} is outside the sieve support [{sigma}, {tau}]")]
    Domain { t: f64, sigma: f64, tau: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row {row}: required covariates are missing")]
    MissingCovariates { row: usize },

    #[error("model is not identifiable: {0}")]
    Identifiability(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("gradient unavailable: log-likelihood is not finite (degenerate rows: {0:?})")]
    GradientUnavailable(Vec<usize>),

    #[error("bootstrap failed: {0}")]
    BootstrapFailure(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
