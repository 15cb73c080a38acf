use sbpp_solver::SolverError;
use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid instance: {0}")]
    Validation(ValidationReport),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario tree: {0}")]
    Scenario(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("follower problem is infeasible")]
    FollowerInfeasible,
    #[error("follower problem is unbounded")]
    FollowerUnbounded,
    #[error("single-level model is infeasible (big-M too small or bad instance)")]
    BilevelInfeasible,
    #[error("no feasible solution found within the limits")]
    NoSolution,
    #[error("extraction check failed: {0}")]
    Extraction(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
