use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("profile has zero total mass")]
    ZeroMass,

    /// Compactly supported jump densities have a Fourier transform equal to 1
    /// on a neighbourhood of the origin, so every quantity built on 1/(1 - ã)
    /// breaks down.
    #[error("degenerate profile: {0}")]
    Degenerate(String),

    #[error("potential is not radial")]
    NonRadial,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
