use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // data model
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("entity {0} does not appear in any matrix")]
    DanglingEntity(usize),
    #[error("matrix {matrix} is declared binary but holds {value} at ({row}, {col})")]
    BadBinary {
        matrix: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("entity {entity} is not a row or column entity of matrix {matrix}")]
    NoSuchEdge { entity: usize, matrix: usize },
    #[error("unknown entity {0}")]
    UnknownEntity(usize),
    #[error("invalid entity: {0}")]
    InvalidEntity(String),

    // numerics
    #[error("eigensolver did not converge within {0} iterations")]
    ConvergenceFailure(usize),
    #[error("matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("kernel scale is degenerate: all rows are identical")]
    DegenerateScale,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss in {0}")]
    NumericalDivergence(String),
    #[error("value outside the domain of {0}")]
    DomainError(String),
    #[error("forward cache does not match the network it is applied to")]
    StaleCache,

    // clustering
    #[error("empty input")]
    EmptyInput,
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("label vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("invalid cluster count: {0}")]
    InvalidClusterCount(String),

    // relational clustering
    #[error("no current indicator for entity {0}")]
    MissingIndicator(usize),
    #[error("invalid chain start: {0}")]
    BadStart(String),
    #[error("means must follow ascending matrix order {expected:?}, got {got:?}")]
    NeighborOrder { expected: Vec<usize>, got: Vec<usize> },

    // experiments
    #[error("every hyperparameter trial diverged")]
    AllTrialsDiverged,
    #[error("infeasible plant: {0}")]
    InfeasibleSpec(String),
    #[error("no recorded permutation for matrix {0}")]
    UnknownMatrix(usize),
    #[error("{path}:{line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("entry ({row}, {col}) is outside a {rows}x{cols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Failures that come from the numerics rather than from the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::ConvergenceFailure(_)
                | Error::NotPositiveDefinite { .. }
                | Error::DegenerateScale
                | Error::NumericalDivergence(_)
                | Error::DomainError(_)
                | Error::AllTrialsDiverged
                | Error::EmptyCluster(_)
        )
    }
}
