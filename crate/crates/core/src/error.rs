use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("m = {m} exceeds the enumeration cap of {cap}; use the Gibbs sampler instead")]
    TooLarge { m: usize, cap: usize },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("incompatible interaction kernel: {0}")]
    Compatibility(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
