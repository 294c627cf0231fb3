use std::path::PathBuf;

/// Errors produced anywhere in the filtering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sample {id}: {message}")]
    Sample { id: String, message: String },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("missing id {0}")]
    MissingId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate percentile bound {0}")]
    DegenerateBound(f64),

    #[error("degenerate IDF table")]
    DegenerateIdf,

    #[error("undefined correlation")]
    UndefinedCorrelation,

    #[error("no n-grams of order {0}")]
    NoNgrams(usize),

    #[error("kernel matrix factorization failed with jitter up to {0:e}")]
    Factorization(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a sample id to an error raised while processing that sample.
    pub fn for_sample(self, id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            other => Error::Sample {
                id: id.to_string(),
                message: other.to_string(),
            },
        }
    }

    /// True for errors caused by user-supplied configuration rather than a
    /// failure during computation.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidArgument(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
