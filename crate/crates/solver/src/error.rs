use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical breakdown after {iterations} iterations: {detail}")]
    NumericalBreakdown { iterations: usize, detail: String },
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
    #[error("backend `{backend}` failed: {detail}")]
    Backend { backend: String, detail: String },
    #[error("LP format error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
