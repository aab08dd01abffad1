use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parameter layout is empty")]
    EmptyLayout,

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("loss is not finite")]
    NonFiniteLoss,

    #[error("draw index {index} out of range for {n_draws} draws")]
    DrawOutOfRange { index: u64, n_draws: u64 },

    #[error("sequence of {len} tokens is too short (need at least {min})")]
    SequenceTooShort { len: usize, min: usize },

    #[error("sequence of {len} tokens exceeds the context cap of {cap}")]
    SequenceTooLong { len: usize, cap: usize },

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocabulary { token: u32, vocab: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("both classes are required, got only {0}")]
    SingleClass(&'static str),

    #[error("zero variance in column `{0}`")]
    ZeroVariance(String),

    #[error("misaligned columns: {0}")]
    Misaligned(String),

    #[error("parameter count {count} exceeds cap {cap}")]
    ParamCapExceeded { count: usize, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
