use std::path::PathBuf;

/// Errors produced anywhere in the reweighting, training and evaluation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {message} (residual {residual:e})")]
    NumericalFailure { message: String, residual: f64 },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown group key `{0}`")]
    Lookup(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("training diverged at step {step}: loss {loss:e}")]
    Diverged { step: u64, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for command-line front ends: 2 for unreadable or
    /// malformed input, 3 for schema and id mismatches, 4 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Io { .. } | Error::Json { .. } | Error::Csv(_) => 2,
            Error::Schema(_) | Error::Lookup(_) => 3,
            Error::NumericalFailure { .. } | Error::DegenerateBatch(_) | Error::Diverged { .. } => 4,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
