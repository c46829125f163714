use thiserror::Error;

use crate::rmd::BlockSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, grids or block layouts that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An argument outside the domain of the operation (lag too large, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input values that are unusable (non-finite, degenerate spectrum, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    /// The solver ran out of iterations. The best iterate is attached.
    #[error("solver did not converge after {iterations} iterations")]
    Convergence {
        iterations: usize,
        best: Box<BlockSolution>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Parse(e.to_string())
        }
    }
}

impl Error {
    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Capability(_) => "capability",
            Error::Infeasible(_) => "infeasible",
            Error::Convergence { .. } => "convergence",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}
