use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum TsbnError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A container or checkpoint file failed structural validation.
    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Data dtype does not match the model's likelihood family.
    #[error("likelihood mismatch: {0}")]
    LikelihoodMismatch(String),

    /// Deterministic-layer operations require the temporal blocks feeding
    /// the top layer from below to be absent or zero.
    #[error("deterministic configuration requires zero {block}; found nonzero entries")]
    NonzeroDeterministicBlock { block: &'static str },

    /// The learning signal went non-finite; training aborts rather than
    /// masking divergence.
    #[error("non-finite learning signal at iteration {iteration}: {detail}")]
    NonFiniteSignal { iteration: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, TsbnError>;

impl TsbnError {
    pub(crate) fn corrupt(what: &'static str, reason: impl Into<String>) -> Self {
        TsbnError::Corrupt { what, reason: reason.into() }
    }
}
