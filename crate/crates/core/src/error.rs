use thiserror::Error;

/// Errors raised by the simulation and estimation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quadrature or iterative computation did not converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A least-squares problem was singular or under-determined.
    #[error("fit error: {0}")]
    Fit(String),

    /// A data series has no sign change where one was required.
    #[error("range error: {0}")]
    Range(String),

    /// The servo loop diverged.
    #[error("servo unstable: {0}")]
    Unstable(String),

    /// Invalid or unknown scenario configuration.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
