use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("unknown model template `{0}`")]
    UnknownTemplate(String),

    #[error("sample has no region metadata; masking requires generated samples")]
    UnsupportedSample,

    #[error("warm start failed at stage `{stage}`: final metric {metric:.4} (bar {bar:.4})")]
    WarmStartFailure {
        stage: &'static str,
        metric: f64,
        bar: f64,
    },

    #[error("non-finite loss at iteration {iteration}: {components}")]
    NonFiniteLoss { iteration: u64, components: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }
}
