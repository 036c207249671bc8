use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(&'static str),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// Smallest singular value of the stacked precoders fell below the ZF threshold.
    #[error("rank-deficient precoder stack (smallest singular value {smallest_sv:e})")]
    RankDeficient { smallest_sv: f64 },

    #[error("interference covariance could not be inverted")]
    SingularCovariance,

    #[error("packet {0} delivered twice")]
    DoubleDelivery(u64),

    #[error("HARQ retransmission at tick {tick} violates RTT spacing (previous {previous}, rtt {rtt})")]
    HarqSpacing { tick: u64, previous: u64, rtt: u64 },

    #[error("schedule invariant violated in cell {cell} at tick {tick}: {what}")]
    InvariantViolation { cell: usize, tick: u64, what: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("{path}:{line}: {msg}")]
    Table { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
