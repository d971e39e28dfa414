use thiserror::Error;

/// Errors raised by the sampling engine, its diagnostics and the experiment
/// configuration layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input point (wrong dimension, non-finite coordinate).
    #[error("invalid input: {0}")]
    Input(String),

    /// A quantity is undefined at the given state (e.g. zero density).
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation attempted on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// A documented invariant was found violated.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Non-finite value encountered during simulation or integration.
    #[error("numeric failure at index {index}: {message}")]
    Numeric { index: usize, message: String },

    /// Brute-force enumeration too large, or sample too small.
    #[error("size error: {0}")]
    Size(String),

    /// Requested feature not supported for the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Missing key in a run configuration.
    #[error("missing mandatory config key `{0}`")]
    MissingKey(String),

    /// Unknown key in a run configuration or override.
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    /// Value outside its admissible range.
    #[error("config key `{key}` = {value} out of range: must lie in {bounds}")]
    Range { key: String, value: String, bounds: String },

    /// Value could not be parsed.
    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    Parse { key: String, value: String, reason: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by user configuration rather than simulation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::MissingKey(_) | Error::UnknownKey(_) | Error::Range { .. } | Error::Parse { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
