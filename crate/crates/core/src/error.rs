use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unknown environment index {0}")]
    UnknownEnv(usize),

    #[error("stale forward cache (parameters changed since forward pass)")]
    StaleCache,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
