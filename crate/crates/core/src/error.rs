use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("duplicate record for match `{match_id}`, player `{player_id}`")]
    DuplicateKey { match_id: String, player_id: String },

    #[error("days with no matches after filtering, panel cannot be balanced: {days:?}")]
    EmptyDays { days: Vec<String> },

    #[error("weight solver did not converge after {iterations} iterations (KKT residual {kkt_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        kkt_residual: f64,
        best: Vec<f64>,
    },

    #[error("singular design matrix; collinear columns: {columns:?}")]
    Singular { columns: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the estimators themselves (as opposed to bad
    /// input). The CLI maps these to a distinct exit status.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::Singular { .. } | Error::Numerical(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
