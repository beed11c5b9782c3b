use std::path::PathBuf;

use thiserror::Error;

use crate::projection::ProjectionReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    /// Input data that does not conform to its schema.
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("empty dataset")]
    EmptyDataset,

    /// A charge was refused because it would exceed the zCDP budget.
    #[error("privacy budget exceeded: requested rho={requested:e}, remaining rho={remaining:e} (short by {shortfall:e})")]
    Budget {
        requested: f64,
        remaining: f64,
        shortfall: f64,
    },

    /// Loss or gradient became non-finite during projection.
    #[error("optimization failed: {message}")]
    Optimization {
        message: String,
        trace: Box<ProjectionReport>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) | Error::Query(_) => 2,
            Error::Schema(_)
            | Error::Data(_)
            | Error::EmptyDataset
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Budget { .. } | Error::Optimization { .. } => 4,
        }
    }
}
