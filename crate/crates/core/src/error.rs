use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// State of a Newton solve when it stopped without converging.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonDiagnostics {
    pub iterations: usize,
    pub score_norm: f64,
    pub log_likelihood: f64,
    /// Accepted iterates, starting with the initial value.
    pub beta_path: Vec<Vec<f64>>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: record `{id}` has an event but no censoring time")]
    MissingCensoringTime { row: usize, id: String },
    #[error("row {row}: negative or non-finite time in record `{id}`")]
    NegativeTime { row: usize, id: String },
    #[error("row {row}: censoring time {cens_time} precedes observed time {time}")]
    CensoringBeforeTime { row: usize, time: f64, cens_time: f64 },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateLengthMismatch { row: usize, expected: usize, found: usize },
    #[error("row {row}: observed time {time} exceeds the horizon {horizon}")]
    BeyondHorizon { row: usize, time: f64, horizon: f64 },
    #[error("need at least 2 events of cause {cause}, found {found}")]
    TooFewEvents { cause: u32, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("Newton iteration did not converge after {} iterations (score norm {:.3e})", .0.iterations, .0.score_norm)]
    NonConvergence(Box<NewtonDiagnostics>),
    #[error("no cause-1 events in the dataset")]
    NoCause1Events,
    #[error("empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },
    #[error("weighted risk set vanishes at event time {time}")]
    ZeroWeightedRiskSet { time: f64 },
    #[error("censoring survival is zero at {time} for a subject with positive vitality")]
    ZeroGhat { time: f64 },
    #[error("anchor time {anchor} does not determine the fit (G = {value})")]
    DegenerateAnchor { anchor: f64, value: f64 },
    #[error("this censoring model needs subject covariates")]
    MissingCovariates,
    #[error("this censoring model needs the subject record, not only covariates")]
    MissingSubject,
    #[error("censoring survival is zero at the event time of subject `{id}`")]
    ZeroConditioningMass { id: String },
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("no bootstrap statistics to take a quantile of")]
    EmptySups,
    #[error("cannot average an empty list of curves")]
    EmptyList,
    #[error("imputation failed: {0}")]
    ImputationFailed(Box<Error>),
    #[error("model fit failed for imputations {indices:?}: {first}")]
    FitFailed { indices: Vec<usize>, first: Box<Error> },
    #[error("{failed} of {total} bootstrap replicates failed (ceiling 5%)")]
    TooManyFailedReplicates { failed: usize, total: usize },
    #[error("censoring calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
