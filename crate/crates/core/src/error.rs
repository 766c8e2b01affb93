use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// The variants group into three families that the CLI maps onto exit codes:
/// invalid arguments, data problems, and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },

    #[error("edge ({i}, {j}) has non-positive or non-finite weight {weight}")]
    BadWeight { i: usize, j: usize, weight: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: line {line}: unknown paper id {id:?}")]
    UnknownPaperId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("split infeasible: class {class} has {available} nodes, {requested} requested")]
    InfeasibleSplit {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("input contains NaN or infinite values")]
    NonFinite,

    #[error("k = {k} out of range (must satisfy {constraint})")]
    KOutOfRange { k: usize, constraint: String },

    #[error(
        "eigensolver did not converge: relative residual {residual:.3e} for eigenpair {index}"
    )]
    NotConverged { index: usize, residual: f64 },

    #[error("linear algebra failure: {0}")]
    Factorization(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NanLoss { epoch: usize },

    #[error("classes {classes:?} have no robust representative; raise the robust fraction")]
    MissingRobustClass { classes: Vec<usize> },

    #[error("no defined centroid to assign against")]
    NoCentroids,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error family, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::KOutOfRange { .. } => ErrorKind::Usage,
            Error::NotConverged { .. }
            | Error::Factorization(_)
            | Error::NanLoss { .. }
            | Error::NonFinite => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
