use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("edge probability {probability} > 1 for pair ({j}, {k})")]
    ProbabilityOverflow { j: usize, k: usize, probability: f64 },

    #[error("non-finite rate {rate} at node {node}, t = {time}")]
    RateOverflow { node: usize, time: f64, rate: f64 },

    #[error("normalization drift {drift:e} at t = {time}")]
    NormalizationDrift { time: f64, drift: f64 },

    #[error("time {time} outside [0, {horizon}]")]
    TimeOutOfRange { time: f64, horizon: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RateOverflow { .. } | Error::NormalizationDrift { .. } | Error::Infeasible(_)
        )
    }
}
