use thiserror::Error;

/// Errors produced by the sampling engine.
#[derive(Debug, Error)]
pub enum GpffError {
    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("shape mismatch: expected {expected} atoms, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("element mismatch: {0}")]
    ElementMismatch(String),

    #[error("structure has zero extent")]
    ZeroExtent,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("xyz parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("provider transport error: {0}")]
    Transport(String),

    #[error("provider schema error: {0}")]
    Schema(String),

    #[error("provider failed at step {step}: {source}")]
    ProviderAtStep {
        step: usize,
        #[source]
        source: Box<GpffError>,
    },

    #[error("unknown element '{0}'")]
    UnknownElement(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GpffError> = std::result::Result<T, E>;
