use serde::Serialize;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    /// Unusable input values (bad prices, shape mismatches, ...).
    #[error("{0}")]
    Data(String),
    /// The estimation itself failed.
    #[error("{0}")]
    Compute(String),
    /// An output file did not pass its schema check.
    #[error("{0}")]
    Schema(String),
}

/// Machine-readable error report written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub error: &'a str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Data(_) => "data",
            CliError::Compute(_) => "compute",
            CliError::Schema(_) => "schema",
        }
    }

    /// 2 config, 3 i/o, 4 parse, 5 data, 6 computation, 7 output schema.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Data(_) => 5,
            CliError::Compute(_) => 6,
            CliError::Schema(_) => 7,
        }
    }

    pub fn report(&self) -> ErrorReport<'_> {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

impl From<afts_core::Error> for CliError {
    fn from(e: afts_core::Error) -> Self {
        use afts_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Io(_) => CliError::Io(msg),
            E::Parse(_) => CliError::Parse(msg),
            E::Structural(_) | E::Domain(_) | E::Data(_) => CliError::Data(msg),
            E::Capability(_) | E::Infeasible(_) | E::Convergence { .. } => CliError::Compute(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Parse(e.to_string())
        }
    }
}
