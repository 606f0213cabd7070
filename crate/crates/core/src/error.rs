use thiserror::Error;

/// Errors produced by the memory engine.
#[derive(Error, Debug)]
pub enum Error {
    #[error("network needs at least 2 clusters of at least 1 neuron, got {clusters} x {cluster_size}")]
    InvalidShape { clusters: usize, cluster_size: usize },

    #[error("cluster index {cluster} out of range 1..={clusters}")]
    ClusterOutOfRange { cluster: usize, clusters: usize },

    #[error("neuron {local} out of range 1..={cluster_size} within its cluster")]
    NeuronOutOfRange { local: usize, cluster_size: usize },

    #[error("neuron index {index} out of range 1..={total}")]
    IndexOutOfRange { index: usize, total: usize },

    #[error("symbol {symbol} in position {position} out of range 1..={cluster_size}")]
    SymbolOutOfRange {
        symbol: usize,
        position: usize,
        cluster_size: usize,
    },

    #[error("expected {expected} symbols, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(String, String),

    #[error("cannot erase {erased} of {clusters} clusters")]
    ErasedOutOfRange { erased: usize, clusters: usize },

    #[error("invalid retrieval configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot parse `{input}`: {reason}")]
    Parse { input: String, reason: String },

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("carrier basis must be at least 2, got {0}")]
    InvalidBasis(u64),

    #[error("aggregate for neuron {index} needs {needed} bits, exceeding the {limit}-bit width limit")]
    Overflow { index: usize, needed: u64, limit: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
