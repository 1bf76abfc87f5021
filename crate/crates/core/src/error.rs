use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("duplicate date {0}")]
    DuplicateDate(String),

    #[error("non-increasing dates at {0}")]
    NonIncreasingDates(String),

    #[error("negative RV {value} at {date}, column {column}")]
    NegativeRv {
        date: String,
        column: String,
        value: f64,
    },

    #[error("row {0} has no observed market")]
    EmptyRow(String),

    #[error("insufficient observations: {0}")]
    InsufficientObservations(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("singular regressors: {0}")]
    SingularRegressors(String),

    #[error("collinear features: {0}")]
    Collinear(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unstable VAR: spectral radius {0:.6} >= 1")]
    Unstable(f64),

    #[error("threshold never met: {0}")]
    ThresholdNeverMet(String),

    #[error("no active targets")]
    NoActiveTargets,

    #[error("panel too short: {0}")]
    PanelTooShort(String),

    #[error("degenerate test: {0}")]
    Degenerate(String),

    #[error("divergence: loss became non-finite (last finite loss {last_finite_loss})")]
    Divergence { last_finite_loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
