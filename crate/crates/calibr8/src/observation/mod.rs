//! Observation operators, summary statistics, observation-error models, and
//! likelihood evaluation.
//!
//! The observation operator `g` maps raw simulator output to the quantities
//! directly comparable with the data vector `y`; the observation model states
//! how the best simulator prediction relates to `y` and defines the
//! likelihood. Stochastic simulators get a Monte Carlo likelihood estimate,
//! and a Gaussian-process discrepancy term can be folded into the Gaussian
//! models.

mod model;
mod mvn;
mod operator;
mod set;
mod summary;

pub use model::ObservationModel;
pub use mvn::CholeskyMvn;
pub use operator::{apply_operator, ObservationOperator, OperatorComponent};
pub use set::{
    discrepancy_log_likelihood, log_likelihood, log_likelihood_stochastic, ObservationSet,
    StochasticLogLik,
};
pub use summary::{summarize, SummaryStatistic};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Simulator(#[from] crate::core::SimulatorError),
}

/// Numerically stable `log(sum(exp(values)))`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
