use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inputs outside the domain of an operation (empty ensembles, grid mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A simulated state became non-finite.
    #[error("non-finite state at step {step} for {who}")]
    NonFinite { step: usize, who: String },
    /// The common-noise matrix is not invertible.
    #[error("noise matrix singular (|det| = {det:e})")]
    SingularNoise { det: f64 },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
