use chrono::{DateTime, NaiveDate, Utc};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed for market {market}: {message}")]
    Validation { market: String, message: String },

    #[error("no clearing price for market {market} at {epoch}")]
    DataGap {
        market: String,
        epoch: DateTime<Utc>,
    },

    #[error("insufficient history for market {market} on {target_day}; earliest feasible target day is {earliest:?}")]
    InsufficientHistory {
        market: String,
        target_day: NaiveDate,
        earliest: Option<NaiveDate>,
    },

    #[error("missing forecast for market {market}, epoch {epoch}")]
    MissingForecast { market: String, epoch: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("infeasible schedule: need {n_min} epochs but only {e_total} are available")]
    Infeasible { n_min: usize, e_total: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Training { epoch: usize, loss: f64 },

    #[error("invalid state: {0}")]
    State(String),

    #[error("data coverage: {0}")]
    Coverage(String),

    #[error("missing artifact {artifact}; run `{stage}` first")]
    MissingArtifact { artifact: String, stage: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::DataGap { .. } => "data-gap",
            Error::InsufficientHistory { .. } => "insufficient-history",
            Error::MissingForecast { .. } => "missing-forecast",
            Error::Argument(_) => "argument",
            Error::Invariant(_) => "invariant",
            Error::Infeasible { .. } => "infeasible",
            Error::Training { .. } => "training",
            Error::State(_) => "state",
            Error::Coverage(_) => "coverage",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
