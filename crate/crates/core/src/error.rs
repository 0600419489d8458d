use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The approximation is undefined for these parameters (e.g. σ² ≥ 2r for the
    /// multiplicative-noise LNA).
    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("simulation diverged in interval {interval} ({t_start} to {t_end} days)")]
    SimulationDiverged {
        interval: usize,
        t_start: f64,
        t_end: f64,
    },

    #[error("observation {index} is {value}; log-scale measurement error needs positive data")]
    NonPositiveObservation { index: usize, value: f64 },

    #[error("chain stuck: {parameter} rejected {rejections} consecutive proposals (iteration {iteration})")]
    StuckChain {
        parameter: String,
        rejections: u64,
        iteration: usize,
    },

    #[error("keying error: {0}")]
    Keying(String),

    #[error("degenerate screen: {0}")]
    DegenerateScreen(String),

    #[error("missing required column `{column}` in {path}")]
    Schema { column: String, path: PathBuf },

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Schema { .. }
            | Error::Data(_)
            | Error::Keying(_)
            | Error::DegenerateScreen(_)
            | Error::NonPositiveObservation { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::InvalidRegime(_) | Error::SimulationDiverged { .. } | Error::StuckChain { .. } => 4,
        }
    }
}
