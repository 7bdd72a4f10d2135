use std::io;

use thiserror::Error;

pub type Result<T, E = HvisError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HvisError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate input: node {node} has zero degree")]
    DegenerateInput { node: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HvisError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        HvisError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            HvisError::Config(_) | HvisError::Parameter(_) => 2,
            HvisError::Divergence(_) | HvisError::Training(_) => 4,
            _ => 3,
        }
    }
}
