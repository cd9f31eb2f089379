//! Crate-wide error type.

use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum Error {
    // -- graph construction and queries --
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("exogenous node {0} has an incoming edge")]
    ExogenousWithParent(NodeId),
    #[error("terminal node {0} has an outgoing edge")]
    TerminalWithChild(NodeId),
    #[error("node dimension must be >= 2, got {dim} on node {node}")]
    BadDimension { node: NodeId, dim: usize },
    #[error("sets overlap on node {0}")]
    OverlappingSets(NodeId),
    #[error("node count {nodes} exceeds cap {cap}")]
    NodeCapExceeded { nodes: usize, cap: usize },
    #[error("cannot un-measure exogenous node {0}")]
    UndoExogenous(NodeId),
    #[error("invalid layering: {0}")]
    InvalidLayering(String),

    // -- linear algebra and quantum objects --
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("not a density matrix: {0}")]
    NotAState(String),
    #[error("SIC dimension must be >= 2, got {0}")]
    BadSicDimension(usize),
    #[error("SIC overlap deviation {dev:.3e} exceeds tolerance {tol:.1e}")]
    SicRejected { dev: f64, tol: f64 },
    #[error("no built-in fiducial for dimension {0}; supply one")]
    MissingFiducial(usize),
    #[error("channel is not completely positive: min Choi eigenvalue {0:.3e}")]
    NotCompletelyPositive(f64),
    #[error("channel is not trace-preserving: deviation {0:.3e}")]
    NotTracePreserving(f64),
    #[error("channel is biased: maximally mixed input deviates by {0:.3e}")]
    BiasedChannel(f64),
    #[error("no ancilla factorization: dout {dout} never divides din {din} * k for k <= {cap}")]
    NoAncilla { din: usize, dout: usize, cap: usize },
    #[error("invalid intervention: {0}")]
    BadIntervention(String),
    #[error("invalid comb pairing: {0}")]
    BadComb(String),

    // -- tables and distributions --
    #[error("unknown variable {0:?} in table")]
    UnknownVariable(String),
    #[error("probability table does not normalize: total {0}")]
    NotNormalized(f64),
    #[error("negative probability {0:.3e} beyond tolerance; simulator bug or invalid input")]
    NegativeProbability(f64),
    #[error("non-quantum reference distribution: inferred entry {0:.3e} below -{1:.0e}")]
    NonQuantumReference(f64, f64),
    #[error("outcome-tuple count {0} exceeds enumeration cap {1}")]
    EnumerationCap(usize, usize),
    #[error("tables are not comparable: {0}")]
    IncompatibleTables(String),
    #[error("malformed target distribution: {0}")]
    BadTarget(String),
    #[error("conditional probability table malformed: {0}")]
    BadCpt(String),

    // -- inference preconditions --
    #[error("causal structure is not layered; inference refused: {0}")]
    NotLayered(String),
    #[error("un-measured layers {0} and {1} are adjacent; each affected layer must be sandwiched between untouched layers")]
    AdjacentUndoLayers(usize, usize),

    // -- model files --
    #[error("model parse error: {0}")]
    ModelParse(String),
    #[error("model field `{field}`: {msg}")]
    ModelField { field: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
