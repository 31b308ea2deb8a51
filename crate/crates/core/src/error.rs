use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("energy causality violated on device {device}: consuming {consumed} quanta with {stored} stored")]
    EnergyCausality {
        device: usize,
        stored: u32,
        consumed: u32,
    },

    #[error("unsupported fading model: {0}")]
    UnsupportedFading(String),

    #[error("invalid channel pmf: {0}")]
    InvalidPmf(String),

    #[error("no bracketing interval for root: f({a}) = {fa}, f({b}) = {fb}")]
    NoBracket { a: f64, b: f64, fa: f64, fb: f64 },

    #[error("value functions live on different battery grids ({left:?} vs {right:?})")]
    MismatchedStateSpace { left: [u32; 2], right: [u32; 2] },

    #[error("policy returned an infeasible action in state b={battery:?}, channel {channel}: {reason}")]
    InfeasibleAction {
        battery: [u32; 2],
        channel: usize,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("numerical procedure did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
