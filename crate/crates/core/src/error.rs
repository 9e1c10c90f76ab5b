use thiserror::Error;

use crate::graph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {}", join_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("invalid head graph: {0}")]
    InvalidHead(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probability underflow: {0}")]
    Underflow(String),

    #[error("k = {requested} is beyond the distribution horizon K = {horizon}")]
    HorizonExceeded { requested: i64, horizon: usize },

    #[error("unconditional mean diverges: defect mass {defect:e} > 0 (use the conditional mean)")]
    DivergentMean { defect: f64 },

    #[error("series not converged within the horizon (estimated residual {residual:e})")]
    HorizonTooSmall { residual: f64 },

    #[error("entropic profile has no saturation value; conditional asymptotics are undefined")]
    UnboundedProfile,

    #[error("enumeration guard exceeded: more than {limit} path terms")]
    EnumerationTooLarge { limit: u64 },

    #[error("no trial produced an arrival ({no_arrival} of {trials} trials)")]
    NoArrivals { no_arrival: u64, trials: u64 },

    #[error("need at least {needed} distinct distances, got {got}")]
    TooFewDistances { needed: usize, got: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
