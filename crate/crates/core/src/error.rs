use std::fmt;
use std::path::PathBuf;

use crate::netmodel::ValidationError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scenario: {0}")]
    Parse(String),

    #[error(transparent)]
    Validation(#[from] ValidationError),

    #[error("domain error: {0}")]
    Domain(String),

    /// The model is infeasible; `family` names the constraint group that carries
    /// the bulk of the infeasibility certificate.
    #[error("{context} is infeasible (binding family: {family})")]
    Infeasible { context: String, family: String },

    #[error("{context} is unbounded")]
    Unbounded { context: String },

    #[error("solver failure in {context}: {detail}")]
    Solver { context: String, detail: String },

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: String, detail: String },

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("output error: {0}")]
    Output(String),
}

impl Error {
    pub(crate) fn domain(msg: impl fmt::Display) -> Self {
        Error::Domain(msg.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Output(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Output(e.to_string())
    }
}
