//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised while ingesting data, fitting models, forecasting or backtesting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate series: {0}")]
    Degenerate(String),

    /// Root bracketing or inversion failed; carries the final bracket.
    #[error("convergence failure: {message} (bracket [{lo}, {hi}])")]
    Convergence { message: String, lo: f64, hi: f64 },

    /// Optimizer failed to produce a usable optimum. `best` holds the best
    /// parameter vector seen, in the model's natural parametrisation.
    #[error("fitting failed: {message}")]
    Fitting { message: String, best: Option<Vec<f64>> },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    /// A condition the code relies on was broken. Always a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }

    pub(crate) fn fitting(message: impl Into<String>, best: Option<Vec<f64>>) -> Self {
        Error::Fitting { message: message.into(), best }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse { line, message: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
