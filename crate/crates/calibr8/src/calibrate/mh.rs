use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::chain::Chain;
use super::{CalibrateError, Objective};
use crate::core::{rng_from, split_seed, ParameterSpace};

#[derive(Debug, Clone)]
pub struct MhConfig {
    /// Per-dimension Gaussian random-walk standard deviations.
    pub proposal_sd: Vec<f64>,
    pub n_iter: usize,
    pub burn_in: usize,
    /// Adapt proposal scales toward 20-50% acceptance during burn-in only;
    /// the kernel is frozen afterwards so the invariant distribution is
    /// untouched.
    pub adapt: bool,
    pub seed: u64,
    /// Cap on objective evaluations; hitting it truncates the chain and
    /// marks it partial.
    pub max_evals: Option<u64>,
}

impl MhConfig {
    pub fn new(proposal_sd: Vec<f64>, n_iter: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            proposal_sd,
            n_iter,
            burn_in,
            adapt: true,
            seed,
            max_evals: None,
        }
    }
}

/// Gaussian random-walk Metropolis-Hastings on an unnormalized log-posterior.
///
/// The chain starts at the prior mean, where `log_post` must be finite.
/// Out-of-box proposals are rejected through the prior's `-inf` log-density
/// (the target owns the prior term). For stochastic targets the cached value
/// of the current state is reused, which is the pseudo-marginal scheme.
pub fn metropolis_hastings(
    log_post: Objective,
    space: &ParameterSpace,
    cfg: &MhConfig,
) -> Result<Chain, CalibrateError> {
    let d = space.dim();
    if cfg.n_iter <= cfg.burn_in {
        return Err(CalibrateError::Config(format!(
            "n_iter {} must exceed burn_in {}",
            cfg.n_iter, cfg.burn_in
        )));
    }
    if cfg.proposal_sd.len() != d || cfg.proposal_sd.iter().any(|&s| !(s > 0.0)) {
        return Err(CalibrateError::Config(
            "proposal_sd must have one positive entry per dimension".into(),
        ));
    }

    let mut rng = rng_from(cfg.seed, 0);
    let mut evals = 0u64;
    let budget = cfg.max_evals.unwrap_or(u64::MAX);

    let mut x = space.prior_mean();
    let mut lp = log_post(&x, split_seed(cfg.seed, 1))?;
    evals += 1;
    if !lp.is_finite() {
        return Err(CalibrateError::Calibration(format!(
            "log-posterior is {lp} at the start point {x:?}"
        )));
    }

    let mut sd = cfg.proposal_sd.clone();
    let mut states = Vec::with_capacity(cfg.n_iter - cfg.burn_in);
    let mut trace = Vec::with_capacity(cfg.n_iter - cfg.burn_in);
    let mut accepted_post = 0u64;
    let mut accepted_window = 0u64;
    let mut window = 0u64;
    let mut partial = false;

    for iter in 0..cfg.n_iter {
        if evals >= budget {
            partial = true;
            break;
        }
        let proposal: Vec<f64> = x
            .iter()
            .zip(&sd)
            .map(|(xi, s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                xi + s * z
            })
            .collect();
        let lp_new = log_post(&proposal, split_seed(cfg.seed, 2 + iter as u64))?;
        evals += 1;
        if lp_new.is_nan() {
            return Err(CalibrateError::Calibration(format!(
                "log-posterior is NaN at {proposal:?}"
            )));
        }
        let accept = (rng.random::<f64>()).ln() < lp_new - lp;
        if accept {
            x = proposal;
            lp = lp_new;
        }

        if iter < cfg.burn_in {
            if cfg.adapt {
                window += 1;
                if accept {
                    accepted_window += 1;
                }
                if window == 50 {
                    let rate = accepted_window as f64 / window as f64;
                    if rate < 0.20 {
                        sd.iter_mut().for_each(|s| *s *= 0.7);
                    } else if rate > 0.50 {
                        sd.iter_mut().for_each(|s| *s *= 1.3);
                    }
                    window = 0;
                    accepted_window = 0;
                }
            }
        } else {
            if accept {
                accepted_post += 1;
            }
            states.push(x.clone());
            trace.push(lp);
        }
    }

    let retained = states.len();
    let acceptance_rate = if retained > 0 {
        accepted_post as f64 / retained as f64
    } else {
        0.0
    };
    Ok(Chain {
        states,
        log_post: trace,
        acceptance_rate,
        burn_in: cfg.burn_in,
        partial,
    })
}
