use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode index {0}, expected 1, 2 or 3")]
    InvalidMode(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("solver diverged at iteration {iteration}: {reason}")]
    SolverDivergence { iteration: usize, reason: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("gradient unavailable at probe {probe}: {source}")]
    GradientUnavailable {
        probe: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training aborted: {skipped} of {steps} steps skipped")]
    TooManySkipped { skipped: usize, steps: usize },

    #[error("every evaluation diverged")]
    AllDiverged,

    #[error("format error: {0}")]
    Format(String),

    #[error("mask entry {index} is {value}, expected 0 or 1")]
    MaskNotBinary { index: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by the command-line exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    DataFormat,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidMode(_)
            | Error::InvalidRank(_)
            | Error::InvalidParameter(_)
            | Error::Json(_) => ErrorClass::Config,
            Error::ShapeMismatch(_)
            | Error::Format(_)
            | Error::MaskNotBinary { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::DegenerateInput(_) => ErrorClass::DataFormat,
            Error::NotSymmetric(_)
            | Error::NotPositiveDefinite
            | Error::IllConditioned(_)
            | Error::NoConvergence(_)
            | Error::SolverDivergence { .. }
            | Error::GradientUnavailable { .. }
            | Error::TooManySkipped { .. }
            | Error::AllDiverged => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
