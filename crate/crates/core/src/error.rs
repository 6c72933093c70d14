use thiserror::Error;

/// Errors produced by the planning, filtering and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("covariance is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("integration diverged at t = {t}")]
    IntegrationDiverged { t: f64 },

    #[error("ill-conditioned innovation covariance (condition number {condition:e})")]
    IllConditionedInnovation { condition: f64 },

    #[error("event at t = {t} lies outside the horizon [{t0}, {tf}]")]
    ScheduleOutOfRange { t: f64, t0: f64, tf: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time {t} lies outside the horizon [{t0}, {tf}]")]
    OutOfHorizon { t: f64, t0: f64, tf: f64 },

    #[error("total intensity is zero but {count} measurement times were requested")]
    DegenerateIntensity { count: usize },

    #[error("Wasserstein distance is undefined for an empty schedule with positive intensity")]
    UndefinedDistance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("transcription error: {0}")]
    Transcription(String),

    #[error("invalid scenario config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
