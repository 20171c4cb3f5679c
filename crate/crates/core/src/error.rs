use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {msg}")]
    ShapeMismatch { op: &'static str, msg: String },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArg { op: &'static str, msg: String },

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward: already called on this graph root; rebuild the graph first")]
    BackwardReplayed,

    #[error("division by zero in {op}")]
    DivByZero { op: &'static str },

    #[error("missing gradient for parameter '{0}'")]
    MissingGrad(String),

    #[error("unknown parameter '{0}'")]
    UnknownParam(String),

    #[error("duplicate parameter '{0}'")]
    DuplicateParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training aborted: non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, msg: msg.into() }
    }

    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArg { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
