use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("degenerate measure: every importance weight vanished")]
    DegenerateMeasure,
    #[error("non-finite observable value")]
    NonFinite,
    #[error("blow-up at step {step}: |X| = {norm:e}")]
    BlowUp { step: usize, norm: f64 },
    #[error("scalar root finder failed to converge for g = {target:e}")]
    RootFinding { target: f64 },
    #[error("lambda = {lambda} is below the contraction threshold {required}")]
    Threshold { lambda: f64, required: f64 },
    #[error("fixed-point iteration did not contract within {iterations} iterations (|Δ| = {residual:e})")]
    NonContraction { iterations: usize, residual: f64 },
    #[error("noise table mismatch: {0}")]
    NoiseMismatch(String),
    #[error("component {index} failed: {source}")]
    Component {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter { name, value, reason }
    }
}
