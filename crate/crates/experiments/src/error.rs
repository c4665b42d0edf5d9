use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] orthospline::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad config: {0}")]
    Config(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

pub type Result<T> = std::result::Result<T, Error>;
