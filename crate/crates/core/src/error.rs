//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a model formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched vector or matrix dimensions.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A configuration value violates a model invariant.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The global-iteration bound is not contractive for these parameters.
    #[error(
        "divergent regime: xi*(L+2)*psi + xi*L/U - varpi*mu = {denominator:.6e} <= 0 \
         (xi={xi}, L={l_smooth}, psi={psi:.6e}, U={users}, varpi={local_accuracy}, mu={mu})"
    )]
    Divergent {
        denominator: f64,
        xi: f64,
        l_smooth: f64,
        psi: f64,
        users: usize,
        local_accuracy: f64,
        mu: f64,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, Error::Divergent { .. })
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Parse { .. } | Error::Domain(_)
        )
    }
}
