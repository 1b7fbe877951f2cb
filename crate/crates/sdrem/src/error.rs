use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdremError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("inconsistent state: {0}")]
    InconsistentState(String),
    #[error("count overflow: {0}")]
    CountOverflow(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialize(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, SdremError>;
