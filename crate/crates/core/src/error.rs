use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside the domain of the model.
    #[error("invalid {field}: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scenario file or override carried a bad value. `key` is the dotted path.
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        field,
        reason: reason.into(),
    }
}
