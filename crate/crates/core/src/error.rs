use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors.
    #[error("{op}: dimension mismatch: {detail}")]
    Dim { op: &'static str, detail: String },

    /// Invalid configuration detected at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// Bad user-supplied input (CLI argument, config key, query index, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A serialized artifact (checkpoint, raw image) has the wrong layout.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A non-finite value appeared during training.
    #[error("non-finite value produced by op `{op}` (node {node})")]
    NonFinite { op: String, node: usize },
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dim {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
