use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::model::ObservationModel;
use super::mvn::CholeskyMvn;
use super::operator::ObservationOperator;
use super::{log_sum_exp, ObservationError};
use crate::core::{split_seed, ControlInput, Simulator};
use crate::gp::GpModel;

/// A data vector with its observation operator, error model, the control
/// input it was collected under, and optional locations for discrepancy
/// indexing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub y: Vec<f64>,
    pub operator: ObservationOperator,
    pub model: ObservationModel,
    #[serde(default, skip_serializing_if = "ControlInput::is_empty")]
    pub control: ControlInput,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<Vec<f64>>>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self) -> Result<(), ObservationError> {
        if self.operator.len() != self.y.len() {
            return Err(ObservationError::Config(format!(
                "operator has {} components for {} observations",
                self.operator.len(),
                self.y.len()
            )));
        }
        self.model.validate(self.y.len())?;
        if let Some(locs) = &self.locations {
            if locs.len() != self.y.len() {
                return Err(ObservationError::Config(format!(
                    "{} location rows for {} observations",
                    locs.len(),
                    self.y.len()
                )));
            }
        }
        Ok(())
    }

    /// Simulator output mapped into observation space.
    pub fn predict(
        &self,
        sim: &dyn Simulator,
        x: &[f64],
        seed: u64,
    ) -> Result<Vec<f64>, ObservationError> {
        let out = sim.run(x, &self.control.values, seed)?;
        self.operator.apply(&out)
    }
}

/// Exact log-density of `y` under the error model, centered at a prediction
/// already mapped into observation space.
pub fn log_likelihood(
    obs: &ObservationSet,
    pred: &[f64],
    model_params: &BTreeMap<String, f64>,
) -> Result<f64, ObservationError> {
    obs.model.log_likelihood(&obs.y, pred, model_params)
}

/// Monte Carlo log-likelihood estimate for a stochastic simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticLogLik {
    pub value: f64,
    /// True when every sample had zero likelihood.
    pub degenerate: bool,
}

/// Estimate the intractable stochastic-simulator likelihood by simple Monte
/// Carlo over `m` fresh runs: `log (1/m) sum_j exp(log_lik(y | g(f(x, u*, seed_j))))`,
/// computed with log-sum-exp stabilization. The estimate is unbiased on the
/// natural scale, which makes it usable pseudo-marginally inside MCMC.
pub fn log_likelihood_stochastic(
    sim: &dyn Simulator,
    obs: &ObservationSet,
    x: &[f64],
    m: usize,
    seed: u64,
    model_params: &BTreeMap<String, f64>,
) -> Result<StochasticLogLik, ObservationError> {
    if m == 0 {
        return Err(ObservationError::Config("m must be >= 1".into()));
    }
    if !sim.is_stochastic() {
        return Err(ObservationError::Config(
            "log_likelihood_stochastic requires a stochastic simulator".into(),
        ));
    }
    let mut lls = Vec::with_capacity(m);
    for j in 0..m {
        let pred = obs.predict(sim, x, split_seed(seed, j as u64))?;
        lls.push(log_likelihood(obs, &pred, model_params)?);
    }
    let value = log_sum_exp(&lls) - (m as f64).ln();
    let degenerate = value == f64::NEG_INFINITY;
    if degenerate {
        log::warn!("stochastic likelihood degenerate at x = {x:?}: all {m} samples at -inf");
    }
    Ok(StochasticLogLik { value, degenerate })
}

/// Log-density of `y` under `N(pred + m_d(w), C_d(w, w) + Sigma_eps)`, where
/// `m_d`, `C_d` are the discrepancy GP's prior mean vector and covariance
/// matrix at the observation locations.
pub fn discrepancy_log_likelihood(
    obs: &ObservationSet,
    pred: &[f64],
    disc: &GpModel,
    model_params: &BTreeMap<String, f64>,
) -> Result<f64, ObservationError> {
    let mvn = discrepancy_mvn(obs, disc, model_params)?;
    let (mean_d, _) = disc_prior(obs, disc)?;
    if pred.len() != obs.y.len() {
        return Err(ObservationError::Config(format!(
            "{} predictions vs {} observations",
            pred.len(),
            obs.y.len()
        )));
    }
    let resid: Vec<f64> = obs
        .y
        .iter()
        .zip(pred)
        .zip(mean_d.iter())
        .map(|((yi, pi), mi)| yi - pi - mi)
        .collect();
    Ok(mvn.log_pdf(&resid))
}

fn disc_prior(
    obs: &ObservationSet,
    disc: &GpModel,
) -> Result<(DVector<f64>, nalgebra::DMatrix<f64>), ObservationError> {
    let locations = obs.locations.as_ref().ok_or_else(|| {
        ObservationError::Config("discrepancy model needs observation locations".into())
    })?;
    if locations.len() != obs.y.len() {
        return Err(ObservationError::Config(format!(
            "{} location rows for {} observations",
            locations.len(),
            obs.y.len()
        )));
    }
    Ok(disc.prior_mean_cov(locations))
}

/// Cached total-covariance factorization for repeated discrepancy likelihood
/// evaluations; the covariance does not depend on the calibration input.
pub fn discrepancy_mvn(
    obs: &ObservationSet,
    disc: &GpModel,
    model_params: &BTreeMap<String, f64>,
) -> Result<CholeskyMvn, ObservationError> {
    if !obs.model.is_gaussian() {
        return Err(ObservationError::Config(
            "discrepancy likelihood requires a Gaussian observation model".into(),
        ));
    }
    let (_, cov_d) = disc_prior(obs, disc)?;
    let sigma_eps = obs.model.noise_cov(obs.y.len(), model_params)?;
    CholeskyMvn::new(cov_d + sigma_eps)
}
