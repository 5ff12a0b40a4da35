use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coupling from subsystem {from} into subsystem {to} is not backed by an undirected edge")]
    DirectedEdge { from: usize, to: usize },
    #[error("subsystem {i}: A block for neighbour {j} is zero but the C block is not")]
    ZeroAWithNonzeroC { i: usize, j: usize },
    #[error("subsystem {subsystem}: constraint row {row} has non-positive bound {bound}")]
    NonpositiveBound { subsystem: usize, row: usize, bound: f64 },
    #[error("subsystem {subsystem}: probability {p} is outside (0, 1)")]
    InvalidProbability { subsystem: usize, p: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node index {index} out of range for {count} subsystems")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("subsystem {subsystem}: weight {which} is not symmetric positive definite")]
    WeightNotPositiveDefinite { subsystem: usize, which: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TighteningError {
    #[error("probability {0} is outside (0, 1)")]
    OutOfRangeProbability(f64),
    #[error("linearisation parameter {0} is outside (0, 1]")]
    OutOfRangeEpsilon(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("terminal ingredient synthesis is infeasible ({0})")]
    SynthesisInfeasible(String),
    #[error("terminal set is empty: subsystem {subsystem} {kind} row {row} has tightened bound {value:e} <= 0")]
    EmptyTerminalSet { subsystem: usize, kind: &'static str, row: usize, value: f64 },
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("agent {agent}: local problem infeasible")]
    LocalInfeasible { agent: usize },
    #[error("agent {agent}: solver failure ({detail})")]
    NumericalFailure { agent: usize, detail: String },
    #[error("global problem infeasible ({0})")]
    GlobalInfeasible(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("step {k}: neither initialisation strategy is feasible")]
    BothStrategiesInfeasible { k: usize },
    #[error("step {k}: prediction strategy requested but no previous solution exists")]
    MissingPreviousSolution { k: usize },
    #[error("step {k}: prediction strategy failed ({detail}); exact-consensus assumption violated")]
    AssumptionViolation { k: usize, detail: String },
    #[error(transparent)]
    Mpc(#[from] MpcError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("ingredients were generated for model hash {expected}, current model hash is {actual}; re-run `dsmpc synth`")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("run {run} (seed {seed}, stream {stream}): {source}")]
pub struct SimulationError {
    pub run: usize,
    pub seed: u64,
    pub stream: u64,
    #[source]
    pub source: ControllerError,
}
