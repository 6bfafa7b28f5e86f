use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("link {index} out of range for a {layers}-layer stack")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target matrix is zero")]
    ZeroTarget,

    #[error("training diverged at iteration {iteration}: loss {loss:e} exceeds limit {limit:e}")]
    Diverged {
        iteration: usize,
        loss: f64,
        limit: f64,
    },

    #[error("{classes} classes requested but only {antennas} receive antennas")]
    TooManyClasses { classes: usize, antennas: usize },

    #[error("all-zero input: {0}")]
    ZeroSignal(&'static str),

    #[error("config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("IDX format error at byte offset {offset}: {message}")]
    Idx { offset: usize, message: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("phase file: {0}")]
    PhaseFile(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
