use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input outside the loss domain: {0}")]
    InputDomain(String),

    #[error("training error in {layer}: {detail}")]
    Training { layer: String, detail: String },

    #[error("cannot compute threshold for class {class}: queue is empty")]
    Threshold { class: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: u64, message: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("run with seed {seed} failed: {source}")]
    Run {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid config file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the CLI, one per error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Toml(_) => 2,
            Error::Io(_) => 3,
            Error::Ingestion { .. } | Error::Csv(_) | Error::Json(_) => 4,
            Error::Training { .. } | Error::InputDomain(_) => 5,
            Error::Threshold { .. } | Error::Precondition(_) | Error::Internal(_) => 70,
            Error::Run { source, .. } => source.exit_code(),
        }
    }
}
