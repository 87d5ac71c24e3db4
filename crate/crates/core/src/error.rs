use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported wav {field}: {value}")]
    UnsupportedWav { field: &'static str, value: u32 },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid decoder config: {0}")]
    DecoderConfig(String),
    #[error("invalid attack: {0}")]
    Attack(String),
    #[error("message length {k} exceeds signal length {h}")]
    MessageTooLong { k: usize, h: usize },
    #[error("embedding diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
