use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("index mismatch: {0}")]
    IndexMismatch(String),

    #[error("welfare oracle configuration: {0}")]
    OracleConfig(String),

    #[error("type {label:?} of bidder {bidder} has zero probability")]
    ZeroProbability { bidder: usize, label: String },

    #[error("unknown type label {label:?} for bidder {bidder}")]
    UnknownType { bidder: usize, label: String },

    #[error("decomposition residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    Decomposition { residual: f64, tolerance: f64 },

    #[error("revenue search failed: {0}")]
    SearchFailed(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
