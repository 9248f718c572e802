use hrf_core::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CkksError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("malformed key or ciphertext file: {0}")]
    Format(String),
    #[error("secret key required for {0}")]
    MissingSecret(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CkksError> for EngineError {
    fn from(e: CkksError) -> Self {
        match e {
            CkksError::Engine(e) => e,
            other => EngineError::Backend(other.to_string()),
        }
    }
}
