use crate::schemes::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every error names the module it originated from.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{module}: invalid parameter: {msg}")]
    Param { module: &'static str, msg: String },

    #[error("{module}: index error: {msg}")]
    Index { module: &'static str, msg: String },

    #[error("{module}: {frames} frames exceed the budget of {budget}")]
    Capacity {
        module: &'static str,
        frames: usize,
        budget: usize,
    },

    #[error("{module}: non-finite value at {at}")]
    Numeric { module: &'static str, at: String },

    #[error("data: malformed tensor file at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("orchestrator: scheme failed validation ({} violations, first: {})", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidScheme(Vec<Violation>),

    #[error("orchestrator: stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("train: non-finite loss at step {step}; diagnostic checkpoint captured")]
    Diverged {
        step: usize,
        params: Box<crate::denoiser::DenoiserParams>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Param {
            module,
            msg: msg.into(),
        }
    }

    pub(crate) fn index(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Index {
            module,
            msg: msg.into(),
        }
    }
}
