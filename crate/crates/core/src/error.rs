use thiserror::Error;

/// Errors produced by corpus loading, model training and scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {location}: {message}")]
    Malformed { location: String, message: String },

    #[error("duplicate instance id {id:?}")]
    DuplicateId { id: String },

    #[error("corpus is empty after filtering; scores are undefined on an empty corpus")]
    EmptyCorpus,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("feature {feature:?} is not in the vocabulary")]
    UnknownFeature { feature: String },

    #[error("vocabulary mismatch: expected digest {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Train(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Malformed {
            location: location.into(),
            message: message.into(),
        }
    }
}
