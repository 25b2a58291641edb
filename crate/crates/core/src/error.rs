use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("input is empty")]
    Empty,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("anchor index {index} out of range for {n} points")]
    AnchorOutOfRange { index: usize, n: usize },

    #[error("duplicate {side} anchor index {index}")]
    DuplicateAnchor { side: &'static str, index: usize },

    #[error("anchor budget {budget} exceeds number of points {n}")]
    BudgetTooLarge { budget: usize, n: usize },

    #[error("knn k = {k} must be smaller than the number of points {n}")]
    KnnTooLarge { k: usize, n: usize },

    #[error("kNN bandwidth is zero: every point coincides with its k-th nearest neighbor (duplicate points?)")]
    DegenerateBandwidth,

    #[error("vertex {0} has zero degree; the normalized Laplacian is undefined")]
    IsolatedVertex(usize),

    #[error("spectral dimension {requested} too large for {n} points ({available} non-trivial eigenpairs available)")]
    SpectralDimTooLarge {
        requested: usize,
        n: usize,
        available: usize,
    },

    #[error("eigensolver did not converge after {restarts} restarts ({converged}/{wanted} pairs converged)")]
    NoConvergence {
        restarts: usize,
        converged: usize,
        wanted: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("row {row} of the {matrix} matrix has zero norm")]
    ZeroNormRow { matrix: &'static str, row: usize },

    #[error("recall cutoff {k} exceeds number of targets {n}")]
    CutoffTooLarge { k: usize, n: usize },

    #[error("image-space recall table has no entry for R@{k} ({direction})")]
    MissingCutoff { k: usize, direction: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// The innermost error, with stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Tags an error with the pipeline stage that produced it.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
