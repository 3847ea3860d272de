use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, bad config, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("rotation angle {0} rad is too close to pi for a unique axis-angle")]
    RotationAmbiguity(f64),

    #[error("normal maps have no overlapping valid pixels")]
    NoOverlap,

    #[error("normal equations are singular even with damping {damping:e}")]
    SingularSystem { damping: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("implicit surface is empty")]
    EmptySurface,

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
