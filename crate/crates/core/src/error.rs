use thiserror::Error;

/// Errors raised by model evaluation, simulation, estimation and fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A path left the stable regime: the step budget ran out, the step
    /// underflowed, or the state became non-finite.
    #[error("path exploded after {steps} steps at t={time}, x={value}")]
    Explosion { steps: u64, time: f64, value: f64 },

    /// Explosion in one leg of a coupled simulation.
    #[error("{leg} leg: path exploded after {steps} steps at t={time}, x={value}")]
    LegExplosion {
        leg: Leg,
        steps: u64,
        time: f64,
        value: f64,
    },

    #[error("estimation failed: {failures} of {n_paths} paths exploded")]
    Estimation { failures: usize, n_paths: usize },

    #[error("regression error: {0}")]
    Regression(String),
}

/// Identifies a leg of a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Fine,
    Coarse,
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Leg::Fine => f.write_str("fine"),
            Leg::Coarse => f.write_str("coarse"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
