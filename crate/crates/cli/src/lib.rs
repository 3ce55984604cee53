//! Command-line front end: a TOML run configuration plus a model registry
//! drive the samplers in `gencut-core`, and every run leaves a manifest
//! recording exactly what was done.
//!
//! The binary is a thin wrapper over [`runner::run`]; the library exists so
//! downstream crates can register their own models through
//! [`registry::Registry::register`] and reuse the same configuration and
//! manifest handling.

pub mod config;
pub mod manifest;
pub mod registry;
pub mod runner;

use std::fmt;

/// Process exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Process exit code for configuration errors (parse failures, invalid or
/// missing fields, unknown models).
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for numeric failures (non-convergence, indefinite
/// curvature, degenerate weights).
pub const EXIT_NUMERIC: i32 = 3;
/// Process exit code for I/O failures (unreadable data, unwritable output).
pub const EXIT_IO: i32 = 4;

/// Errors surfaced to the user, each carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// The configuration is malformed or inconsistent.
    Config(String),
    /// A sampler or solver failed numerically.
    Numeric(String),
    /// A file could not be read or written.
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    /// The exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gencut_core::Error> for CliError {
    fn from(e: gencut_core::Error) -> Self {
        use gencut_core::Error as E;
        match e {
            E::InvalidInput(_) => CliError::Config(e.to_string()),
            E::Io(inner) => CliError::Io(inner.to_string()),
            E::Csv(inner) => CliError::Io(inner.to_string()),
            E::Json(inner) => CliError::Io(inner.to_string()),
            E::PathologicalEval { .. }
            | E::SolverFailure { .. }
            | E::IndefiniteHessian { .. }
            | E::SingularMatrix { .. }
            | E::SingularScoreCovariance { .. }
            | E::TooManyInnerFailures { .. }
            | E::DegenerateWeights => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
