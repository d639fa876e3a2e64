use std::path::PathBuf;

use fspda_core::FspdaError;
use thiserror::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Malformed input, configuration or arguments.
pub const EXIT_DATA: i32 = 2;
/// The data parsed but the estimator or test is numerically degenerate.
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// `row` is the 1-based line in the file (the header is line 1).
    #[error("parse error at row {row}, column {column:?}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column {0:?} not found in header")]
    MissingColumn(String),

    #[error("non-finite value {value:?} at row {row}, column {column:?}")]
    NonFiniteValue { row: usize, column: String, value: String },

    #[error("treatment marker {0:?} not found among period labels")]
    TreatmentMarkerNotFound(String),

    #[error("need at least 3 pre-treatment and 2 post-treatment rows, got {pre} and {post}")]
    TooFewRows { pre: usize, post: usize },

    #[error("invalid configuration field {field:?}: {message}")]
    Config { field: String, message: String },

    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] FspdaError),
}

impl AppError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(
                FspdaError::RankDeficient { .. }
                | FspdaError::NonPositiveLrv { .. }
                | FspdaError::Infeasible
                | FspdaError::EmptyPath,
            ) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

pub type AppResult<T> = std::result::Result<T, AppError>;
