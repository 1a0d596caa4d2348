use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("parse error: {0}")]
    Format(String),

    #[error("item {item:?} lists inconsistent skills across rows")]
    InconsistentSkills { item: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("item {item} has no Q-matrix row")]
    MissingItem { item: usize },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate batch: no unmasked entries")]
    DegenerateBatch,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
