//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the array engine, hypergraph validation, layer
/// plumbing, dataset IO, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("segment id {id} out of range for {num_segments} segments")]
    SegmentOutOfRange { id: usize, num_segments: usize },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("invalid hypergraph: {0}")]
    InvalidHypergraph(String),

    #[error("invalid tensor sequence: {0}")]
    InvalidTensorSequence(String),

    #[error("permutation of length {got} applied to hypergraph with {expected} nodes")]
    PermutationLength { expected: usize, got: usize },

    #[error("hyperedge order {order} exceeds max tensor order {max_order}")]
    OrderExceedsMax { order: usize, max_order: usize },

    #[error("oracle size guard exceeded: {0}")]
    OracleGuard(String),

    #[error("missing weight for equality pattern {0}")]
    MissingPatternWeight(String),

    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),

    #[error("no weight entry for order triple (k={k}, l={l}, overlap={overlap}); lookup tables only cover orders seen at construction")]
    UnseenOrder { k: usize, l: usize, overlap: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset schema violation: {0}")]
    Schema(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("empty evaluation split")]
    EmptySplit,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
