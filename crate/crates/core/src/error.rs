use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inadmissible splitting parameters (alpha={alpha}, beta={beta}, omega={omega}): need alpha > 0, beta > 0, 0 <= omega < 2")]
    InadmissibleParams { alpha: f64, beta: f64, omega: f64 },

    #[error("matrix is singular ({0})")]
    Singular(&'static str),

    #[error("dense evaluation of dimension {dim} exceeds the cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("eigenvalue computation failed to converge")]
    EigenFailure,

    #[error("covariance matrix is not positive definite after jitter")]
    NotPositiveDefinite,

    #[error("training failed on all {restarts} restarts: {diagnostics}")]
    TrainingFailed { restarts: usize, diagnostics: String },

    #[error("no converging point on the search grid for size {size}")]
    NoConvergingPoint { size: usize },

    #[error("traversal failed at size {size}: {source}")]
    Traversal {
        size: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
