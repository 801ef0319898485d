use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least two measurements per subject")]
    TooFewMeasurements,

    #[error("oracle limited to small m (got m = {0}, max 6)")]
    OracleLimit(usize),

    #[error("invalid permutation for subject {subject}")]
    InvalidPermutation { subject: usize },

    #[error("coefficients not PSD")]
    NotPsd,

    #[error("numerical overflow; reduce step size")]
    NumericalOverflow,

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Divergence {
        epoch: usize,
        loss: f64,
        trajectory: Vec<f64>,
    },

    #[error("insufficient local data; increase h or set ridge")]
    InsufficientLocalData,

    #[error("rank-deficient design; increase ridge or data")]
    RankDeficient,

    #[error("eigendecomposition failed")]
    Eigen,

    #[error("loclin requires d=1")]
    LoclinDimension,

    #[error("all bandwidth candidates failed to fit")]
    BandwidthSelection,

    #[error("dimension mismatch: expected d = {expected}, found d = {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
