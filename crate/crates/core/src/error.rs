use thiserror::Error;

/// Errors raised by the inference engine.
///
/// Validation problems (bad input shapes, non-finite values, malformed files)
/// are kept apart from numerical failures so that front ends can map them to
/// distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("IRLS did not converge after {iterations} iterations (deviance trace {deviance:?})")]
    IrlsConvergence { iterations: usize, deviance: Vec<f64> },

    #[error("empty selection: the Lasso selected no variables")]
    EmptySelection,

    #[error("singular submatrix: {0}")]
    SingularSubmatrix(String),

    #[error("degenerate conditioning: C Sigma C^T is singular")]
    DegenerateConditioning,

    #[error("observed point violates the constraints by {violation:.3e}")]
    InvalidStartPoint { violation: f64 },

    #[error("degenerate truncation interval [{lower}, {upper}]")]
    DegenerateTruncation { lower: f64, upper: f64 },

    #[error("sampler stuck: {consecutive} consecutive zero-width steps")]
    StuckChain { consecutive: usize },

    #[error("degenerate variance estimate (sigma = {0})")]
    DegenerateSigma(f64),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
