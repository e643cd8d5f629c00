use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("edge {edge} references unknown node `{node}`")]
    DanglingEdge { edge: usize, node: String },
    #[error("graph needs at least one input node and one output node")]
    NoInputOrOutput,
    #[error("node `{0}` does not lie on any input-to-output path")]
    UnreachableNode(String),
    #[error("node `{0}` has zero width")]
    ZeroWidth(String),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("path enumeration exceeded the cap of {cap} paths")]
    PathExplosion { cap: usize },
    #[error("edge {0} is not on the path")]
    EdgeNotOnPath(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid K={k} for M={m} (need 1 <= K <= M)")]
    InvalidK { m: usize, k: usize },
    #[error("invalid P={p} for M={m} (need P = g^2 with g dividing M)")]
    InvalidP { m: usize, p: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("training diverged at step {step}: loss {loss} (initial {initial})")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("statistics are not mutually diagonalizable (residual {residual:e} > tolerance {tolerance:e})")]
    NotDiagonalizable { residual: f64, tolerance: f64 },
    #[error("weights are off the decoupled manifold (leakage {leakage:e} > tolerance {tolerance:e})")]
    OffManifold { leakage: f64, tolerance: f64 },
    #[error("initial effective singular value must be positive, got {0}")]
    InvalidA0(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("verification failed: {}", .0.join(", "))]
    VerificationFailed(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
