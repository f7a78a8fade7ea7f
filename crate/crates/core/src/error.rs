use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input at byte {offset}, field `{field}`: {reason}")]
    Format {
        offset: u64,
        field: &'static str,
        reason: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("covariance is rank deficient: rank {rank} of {dim}")]
    RankDeficient { rank: usize, dim: usize },

    #[error("{0} diverged; retry with a smaller learning rate")]
    Divergence(String),

    #[error("{0}")]
    Degenerate(String),

    #[error("missing prerequisite: {0}")]
    MissingStage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
