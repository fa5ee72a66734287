use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A simulation or run configuration violates a model invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// No `n_min` up to `n_tot` can produce the requested alpha.
    #[error("infeasible: alpha {alpha} exceeds the maximum {max} attainable with n_tot = {n_tot}")]
    Infeasible { alpha: f64, n_tot: u64, max: f64 },

    /// An estimator has no data to work with (no clicks, no empty bins, ...).
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn undefined(msg: impl Into<String>) -> Self {
        Error::UndefinedEstimate(msg.into())
    }
}
