use std::path::PathBuf;

use crate::svr::DualSolution;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The SMO iteration budget ran out before the KKT gap closed.
    #[error("SMO did not converge after {iterations} iterations (max KKT violation {max_violation:.3e})")]
    NotConverged {
        iterations: usize,
        max_violation: f64,
        best: Box<DualSolution>,
    },

    #[error("fold {fold} ({group_id}): {source}")]
    Fold {
        fold: usize,
        group_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    /// Malformed input data; `row` is 1-based and counts the header as row 1.
    #[error("{}", fmt_ingest(.path, *.row, .message))]
    Ingest {
        path: Option<PathBuf>,
        row: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_ingest(path: &Option<PathBuf>, row: Option<usize>, message: &str) -> String {
    let mut out = String::new();
    if let Some(p) = path {
        out.push_str(&p.display().to_string());
        out.push_str(": ");
    }
    if let Some(r) = row {
        out.push_str(&format!("row {r}: "));
    }
    out.push_str(message);
    out
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn ingest(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingest {
            path: None,
            row,
            message: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::Ingest { .. } | Error::Json(_) | Error::Csv(_) => {
                true
            }
            Error::Fold { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
