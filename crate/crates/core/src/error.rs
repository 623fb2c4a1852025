use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e} below tolerance {tolerance:.3e})")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The pooled scale matrix `V1/n1 + V2/n2` could not be factored.
    #[error("singular scale matrix{}", block_suffix(*.block))]
    SingularScale { block: Option<usize> },

    #[error(
        "null table too thin: tail probability {p:.3e} needs at least {required} replicates, table has {b} (use b >= {required})"
    )]
    TailTooThin { p: f64, b: u64, required: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no null table for block dimension d = {0}")]
    MissingTable(usize),

    #[error("grid point x2 = {x2} has only {expected:.1} expected exceedances (need >= 50)")]
    InvalidGrid { x2: f64, expected: f64 },

    #[error("null table {path} is not cached and auto-build is disabled")]
    TableNotCached { path: PathBuf },

    #[error("malformed null-table file {path}: {reason}")]
    BadTableFile { path: PathBuf, reason: String },

    #[error("replicate {rep}: {source}")]
    Replicate { rep: u64, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn block_suffix(block: Option<usize>) -> String {
    match block {
        Some(i) => format!(" in block {i}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a block index to a `SingularScale` error.
    pub fn in_block(self, index: usize) -> Self {
        match self {
            Error::SingularScale { .. } => Error::SingularScale { block: Some(index) },
            other => other,
        }
    }
}
