use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A log-density or log-ratio evaluated to NaN.
    #[error("NaN produced by {0}")]
    Nan(&'static str),
    /// Importance weights collapsed below the representable floor.
    #[error("degenerate weights: {0}")]
    Degenerate(String),
    /// An operation was called outside its contract (e.g. second stage after acceptance).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid argument or configuration value.
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// True for failures of the numerical contract, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Nan(_) | Error::Degenerate(_) | Error::Contract(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Reject NaN, pass everything else through.
pub fn check_nan(x: f64, what: &'static str) -> Result<f64> {
    if x.is_nan() {
        Err(Error::Nan(what))
    } else {
        Ok(x)
    }
}
