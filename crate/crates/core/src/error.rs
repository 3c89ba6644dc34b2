use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain of the model.
    #[error("parameter `{name}` = {value:e} violates {constraint}")]
    Domain { name: &'static str, value: f64, constraint: &'static str },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    /// Closed-loop or backaction configuration with non-positive damping.
    #[error("unstable configuration: {0}")]
    Unstable(String),

    #[error("rank-deficient problem: {0}")]
    RankDeficient(String),

    #[error(
        "fit did not converge after {iterations} iterations (residual norm {residual_norm:e}); last iterate {last:?}"
    )]
    NoConvergence { iterations: usize, residual_norm: f64, last: Vec<f64> },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unit mismatch: expected {expected}, found {found}")]
    Units { expected: String, found: String },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad user input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Unstable(_) | Error::RankDeficient(_) | Error::NoConvergence { .. })
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value, constraint: "strictly positive and finite" })
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value, constraint: "non-negative and finite" })
    }
}

pub(crate) fn require_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { name, value, constraint: "within [0, 1]" })
    }
}
