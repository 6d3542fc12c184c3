use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent or invalid experiment/model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file. `field` names the offending header field or section.
    #[error("parse error ({field}): {message}")]
    Parse { field: String, message: String },

    /// A NaN or infinity surfaced where a finite value was required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Temporal efficiency could not be formed (zero denominator surface, empty trace).
    #[error("degenerate efficiency report: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
