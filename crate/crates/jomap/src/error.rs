use thiserror::Error;

/// Errors produced by plan validation, file I/O and the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal plan: {0}")]
    InvalidPlan(String),

    #[error("time {time_s} s outside plan horizon [{start_s}, {end_s}) for phase {phase_id}")]
    OutOfHorizon {
        phase_id: String,
        time_s: f64,
        start_s: f64,
        end_s: f64,
    },

    #[error("unknown phase id {0}")]
    UnknownPhase(String),

    #[error("invalid trajectory {vehicle_id}: {reason}")]
    InvalidTrajectory { vehicle_id: String, reason: String },

    #[error("insufficient departures to fit a saturation rate (need >= 2 points)")]
    InsufficientDepartures,

    #[error("degenerate departure wave (non-positive fitted wave speed)")]
    DegenerateWave,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
