use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("duplicate interaction ({user}, {item}) in {split} split")]
    DuplicateEdge {
        user: usize,
        item: usize,
        split: &'static str,
    },

    #[error(
        "node {node} has degree zero; symmetric normalization is undefined without self-loops"
    )]
    IsolatedNode { node: usize },

    #[error("user {user} has only {available} non-neighbor items but {requested} negatives were requested")]
    NotEnoughNegatives {
        user: usize,
        available: usize,
        requested: usize,
    },

    #[error(
        "dense oracle limited to n <= {limit} nodes (got {n}); use the sparse operators instead"
    )]
    DenseGuard { n: usize, limit: usize },

    #[error("walk count overflow at length {length}")]
    WalkOverflow { length: usize },

    #[error("operator kind {found:?} where {expected} was required")]
    OperatorKind {
        expected: &'static str,
        found: crate::graph::OperatorKind,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {node} has zero norm and cannot be normalized")]
    ZeroNormRow { node: usize },

    #[error("invalid propagation config: {0}")]
    Config(String),

    #[error("backward pass called with a cache from a different forward call: {0}")]
    CacheMismatch(String),

    #[error("embedding row {node} has norm {norm}, expected unit norm")]
    NotNormalized { node: usize, norm: f64 },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("non-finite gradient at row {row} ({context})")]
    NonFiniteGradient { row: usize, context: String },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("{0}")]
    Classifier(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
