use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric argument or structural precondition was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration key failed to parse or validate.
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// Malformed or unsupported event-log / table content.
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },

    #[error("unsupported event log format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// An estimator has no counts to work with.
    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    /// Damped least squares ran out of iterations; carries the last iterate.
    #[error("fit did not converge after {iterations} iterations (cost {cost:.6e}, params {params:?})")]
    NonConvergence {
        iterations: usize,
        cost: f64,
        params: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn data(line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            line,
            message: message.into(),
        }
    }
}
