use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("missing weight tensor `{0}`")]
    MissingWeight(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("truncated stream")]
    Truncated,

    #[error("weight digest mismatch: container expects {expected}, weights have {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("synthesis hash mismatch: container has {expected}, decoder produced {actual}")]
    SynthesisMismatch { expected: String, actual: String },

    #[error("training diverged in stage {stage} at epoch {epoch}")]
    Diverged { stage: String, epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
