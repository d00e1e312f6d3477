use thiserror::Error;

/// Errors raised by model construction, factorization and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("singular Helmholtz operator for wavenumber k = {k}")]
    SingularOperator { k: f64 },

    #[error("wavenumber k = {0} is not part of the model")]
    UnknownWavenumber(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error("prior compression is indefinite: clipped eigenvalue {clipped:.3e} exceeds 1e-6 of {norm:.3e}")]
    IndefinitePrior { clipped: f64, norm: f64 },

    #[error("{what} limit exceeded: {size} > {limit}")]
    LimitExceeded {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
