use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("strategy `{strategy}` is not supported for {task} tasks")]
    UnsupportedStrategy { strategy: String, task: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("invalid config:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("incomplete run directory: {0}")]
    IncompleteRun(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code contract: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
