use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate note_id `{0}`")]
    DuplicateKey(String),

    #[error("parse error at row {row}: {detail}")]
    Parse { row: u64, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport error after {retries} retries: {detail}")]
    Transport { detail: String, retries: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend does not support {0}")]
    Capability(String),

    #[error("backend returned HTTP {status}: {error}: {detail}")]
    Backend {
        status: u16,
        error: String,
        detail: String,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that originate in the model backend rather than in
    /// the caller's inputs.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Transport { .. }
                | Error::Protocol(_)
                | Error::Capability(_)
                | Error::Backend { .. }
        )
    }

    /// Short machine-readable tag used in JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::DuplicateKey(_) => "duplicate_key",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol",
            Error::Capability(_) => "capability",
            Error::Backend { .. } => "backend",
            Error::Assembly(_) => "assembly",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
