use thiserror::Error;

#[derive(Debug, Error)]
pub enum CtError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("lag out of range: |s| = {s} must be < T = {t}")]
    LagRange { s: usize, t: usize },
    #[error("bandwidth error: {0}")]
    Bandwidth(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("ill-conditioned basis: {0}")]
    IllConditioned(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("heuristic failure: {0}")]
    HeuristicFailure(String),
    #[error("estimator failure: {0}")]
    EstimatorFailure(String),
    #[error("no decision: cap {cap} reached without non-rejection")]
    NoDecision { cap: usize, trace: Vec<(usize, bool)> },
    #[error("experiment error: {0}")]
    Experiment(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CtError>;
