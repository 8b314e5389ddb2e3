//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("plant settle diverged after {steps} steps (energy increased 10 consecutive times); check stiffness/step configuration")]
    DivergentSettle { steps: usize },

    #[error("training diverged: loss is not finite")]
    DivergentTraining,

    #[error("held-out error {got:.4} {unit} exceeds threshold {limit} {unit} (underfit)")]
    Underfit { got: f64, limit: f64, unit: &'static str },

    #[error("online buffer has {got} samples, need at least {need}")]
    BufferTooSmall { got: usize, need: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },

    #[error("inverse kinematics residual {residual:.2} mm exceeds {limit} mm: target unreachable")]
    Unreachable { residual: f64, limit: f64 },

    #[error("invalid model fixture: {0}")]
    Fixture(String),

    #[error("invalid weight file: {0}")]
    WeightFile(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("plant settle failed mid-scenario at phase {phase}, rand {rand_idx}: {source}")]
    ScenarioAborted {
        phase: String,
        rand_idx: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
