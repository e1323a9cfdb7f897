use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: usize },

    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("time index mismatch at position {position}: `{returns}` (returns) vs `{factors}` (factors)")]
    Misaligned {
        position: usize,
        returns: String,
        factors: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} is singular or ill-conditioned (condition number {condition:.3e})")]
    Singular { what: String, condition: f64 },

    #[error("lasso did not converge at lambda {lambda:.6e} after {sweeps} sweeps (last change {last_change:.3e})")]
    NotConverged {
        lambda: f64,
        sweeps: usize,
        last_change: f64,
    },

    #[error("degenerate asset {index}: tau^2 = {tau_sq:.3e} is below the variance floor {floor:.3e}")]
    DegenerateAsset {
        index: usize,
        tau_sq: f64,
        floor: f64,
    },

    #[error("degenerate efficient frontier: AD - F^2 = {0:.3e}")]
    DegenerateFrontier(f64),

    #[error("ambiguous branch: 1'Gamma mu = {0:.3e} is within the zero dead-zone")]
    AmbiguousBranch(f64),

    #[error("non-positive quadratic form in {context}: {value:.6e}")]
    NonPositive { context: String, value: f64 },

    #[error("{failed} of {total} {what} failed")]
    TooManyFailures {
        what: String,
        failed: usize,
        total: usize,
    },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NotConverged { .. }
                | Error::DegenerateAsset { .. }
                | Error::DegenerateFrontier(_)
                | Error::AmbiguousBranch(_)
                | Error::NonPositive { .. }
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
