use thiserror::Error;

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] mimcool_core::Error),

    #[error("invalid simulation config: {0}")]
    Config(String),

    /// The displacement left the bounded region; the loop is unstable.
    #[error("simulation diverged at sample {sample} (t = {time:e} s, |x| = {value:e} m)")]
    Diverged { sample: usize, time: f64, value: f64 },
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}
