use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sentence token {position} ({field}) {reason}: {token:?}")]
    Grammar { position: usize, field: &'static str, token: String, reason: String },

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("plugin: {0}")]
    Plugin(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, stable across versions.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Grammar { .. } => "grammar",
            Error::Alignment(_) => "alignment",
            Error::Split(_) => "split",
            Error::Corpus(_) => "corpus",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Training(_) => "training",
            Error::Metric(_) => "metric",
            Error::Plugin(_) => "plugin",
            Error::Io { .. } => "io",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
