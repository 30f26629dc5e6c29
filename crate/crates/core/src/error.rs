use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("resource error: {message} (try --tile {suggested_tile})")]
    Resource { message: String, suggested_tile: usize },

    #[error("accounting error: unknown layer kind `{kind}` at layer `{layer}`")]
    Accounting { layer: String, kind: String },

    #[error("scoring error for metric `{metric}`: {reason}")]
    Scoring { metric: String, reason: String },

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("provider `{provider}` failed: {reason}")]
    Provider { provider: String, reason: String },

    #[error("non-finite loss at iteration {iteration}; last good checkpoint: {last_good:?}")]
    NonFiniteLoss {
        iteration: usize,
        last_good: Option<PathBuf>,
    },

    #[error("empty input set")]
    EmptyInput,

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
