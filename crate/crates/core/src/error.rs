use thiserror::Error;

/// Failure categories shared by every module.
///
/// The variants line up with the command-line exit-code contract: input and
/// capability problems are usage errors, everything else is a numerical
/// failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("operation not supported for model {model}: {what}")]
    Capability { model: String, what: String },

    #[error("outside the domain of the operation: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no geodesic found: {0}")]
    NotFound(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn capability(model: impl Into<String>, what: impl Into<String>) -> Self {
        Error::Capability {
            model: model.into(),
            what: what.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
