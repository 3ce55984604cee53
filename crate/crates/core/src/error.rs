//! Error type shared by the whole crate.
//!
//! The split matters downstream: configuration and wiring problems
//! ([`Error::InvalidInput`]) are caller bugs, numeric failures (solver
//! breakdowns, indefinite Hessians, singular matrices) are properties of the
//! model/data pair, and I/O failures come from the filesystem. The CLI maps
//! these classes to distinct exit codes.
//!
//! Out-of-support parameter values are deliberately *not* errors: log
//! densities return `-inf` there and samplers treat such points as
//! rejections.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong outside of ordinary out-of-support points.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments, inconsistent dimensions, missing registrations.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss or prior evaluated to NaN or -inf inside its support.
    ///
    /// `+inf` losses are not routed here: an infinitely bad fit maps to a
    /// `-inf` log density and is handled as a rejection.
    #[error("pathological evaluation in {context}: value is {value}")]
    PathologicalEval { context: String, value: f64 },

    /// An optimizer stopped without meeting its gradient tolerance.
    #[error("optimizer failed to converge after {iterations} iterations (scaled gradient norm {grad_norm:.3e})")]
    SolverFailure { iterations: usize, grad_norm: f64 },

    /// A curvature matrix stayed indefinite even after the jitter ladder.
    #[error("indefinite Hessian: smallest eigenvalue {min_eigenvalue:.3e} after jitter repair")]
    IndefiniteHessian { min_eigenvalue: f64 },

    /// A matrix that must be invertible (or PD) is numerically singular.
    #[error("singular matrix in {context}")]
    SingularMatrix { context: String },

    /// The score covariance estimate cannot be inverted for rate calibration.
    #[error("singular score covariance ({context}); {hint}")]
    SingularScoreCovariance { context: String, hint: String },

    /// Too many per-draw inner solves failed during a sampling run.
    #[error("aborted: {failed} of {total} conditional stages failed (limit is 5%)")]
    TooManyInnerFailures { failed: usize, total: usize },

    /// Every importance weight was -inf, so resampling is impossible.
    #[error("degenerate importance weights: no proposal has positive target density")]
    DegenerateWeights,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for [`Error::InvalidInput`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
