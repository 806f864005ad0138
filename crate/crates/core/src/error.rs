use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("could not place blocks after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("block {0} not found in scene")]
    NotFound(u32),
    #[error("command is empty")]
    EmptyCommand,
    #[error("no command template describes the request: {0}")]
    NotDescribable(String),
    #[error("token index {index} outside vocabulary of size {size}")]
    BadToken { index: usize, size: usize },
    #[error("no disambiguating question exists for `{0}`")]
    Unlabelable(String),
    #[error("malformed data at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("unsupported format or version: {0}")]
    Version(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("incompatible model: {0}")]
    Compatibility(String),
    #[error("session is {actual}, expected {expected}")]
    State { expected: String, actual: String },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}
