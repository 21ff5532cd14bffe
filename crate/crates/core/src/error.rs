use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: pivot {index} has magnitude {magnitude:e}")]
    SingularSystem { index: usize, magnitude: f64 },

    #[error("zero-probability outcome y={y} at m={m}, kappa={kappa}")]
    ZeroProbability { y: i8, m: f64, kappa: f64 },

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate degree sequence at nodes {nodes:?}")]
    Degenerate { nodes: Vec<usize> },

    #[error("non-positive curvature {value} at index {index}")]
    Curvature { index: usize, value: f64 },

    #[error("node {0} is the in-status reference (beta pinned to 0)")]
    ReferenceNode(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate edge {src} -> {dst}")]
    DuplicateEdge { line: usize, src: String, dst: String },

    #[error("line {line}: self loop at node {node}")]
    SelfLoop { line: usize, node: String },

    #[error("preprocessing removed every node")]
    PreprocessingEmpty,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
