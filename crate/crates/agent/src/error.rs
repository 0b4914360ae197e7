use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint does not match the environment: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at update {update}: {detail}")]
    NonFinite { update: usize, detail: String },
    #[error(transparent)]
    Core(#[from] lightpath_core::Error),
}

pub type Result<T> = std::result::Result<T, AgentError>;
