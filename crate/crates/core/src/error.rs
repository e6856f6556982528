use thiserror::Error;

/// Errors raised by the estimation routines and the file loaders.
#[derive(Debug, Error)]
pub enum MudError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("{what} is singular at the rank tolerance")]
    Singular { what: &'static str },

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("over-determined problem ({rows} outputs > {cols} parameters); use least squares")]
    Overdetermined { rows: usize, cols: usize },

    #[error("predictability assumption violated (eigenvalue margin {margin:.3e})")]
    PredictabilityViolated { margin: f64 },

    #[error("every sample has zero observed-to-predicted ratio")]
    TotalPredictabilityFailure,

    #[error("measurement set is rank deficient (rank {rank} of {rows})")]
    RankDeficient { rank: usize, rows: usize },

    #[error("{path}: {message}")]
    Ingest { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MudError> = std::result::Result<T, E>;
