use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("squared distance must be non-negative, got {0}")]
    NegativeSquaredDistance(f64),

    #[error("rigidity test is not defined for dimension {0}")]
    UnsupportedDimension(usize),

    #[error("Riccati recursion broke down at time index {index}")]
    RiccatiBreakdown { index: usize },

    #[error("line search found no sufficient decrease after {0} backtracks")]
    LineSearchFailed(usize),

    #[error("time {t} s is outside the reference horizon [0, {horizon}] s")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("non-finite value in simulation at step {0}")]
    NonFinite(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RiccatiBreakdown { .. } | Error::LineSearchFailed(_) | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        let msg = err.to_string();
        // serde reports "missing field `name` at line .."
        if let Some(rest) = msg.strip_prefix("missing field `") {
            if let Some(end) = rest.find('`') {
                return Error::MissingKey(rest[..end].to_string());
            }
        }
        Error::Config(msg)
    }
}
