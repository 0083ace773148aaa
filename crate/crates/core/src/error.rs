use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("integrator failure at t = {t}: {reason}")]
    Integrator { t: f64, reason: String },
    #[error("ray did not leave the domain within t = {t_max}")]
    Trapped { t_max: f64 },
    #[error("boundary crossing is not transversal (|d|x|/dt| = {rate:.3e})")]
    Grazing { rate: f64 },
    #[error("point is not on the expected boundary set: {0}")]
    NotOnBoundary(String),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("unsupported dimension {0} for this operation")]
    Dimension(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
