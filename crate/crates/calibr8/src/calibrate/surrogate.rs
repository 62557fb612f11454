use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::chain::Chain;
use super::CalibrateError;
use crate::core::{rng_from, split_seed, BlackBoxSimulator, ControlInput, Ensemble, ParameterSpace, Provenance};
use crate::gp::{FitOptions, MeanKind, MultiOutputGp, NoiseSpec};
use crate::observation::ObservationSet;

#[derive(Debug, Clone)]
pub struct SurrogateMhConfig {
    /// Threshold on the code-uncertainty-induced variance of the log
    /// likelihood (score units): proposals above it trigger a real
    /// simulation and a surrogate refit.
    pub variance_threshold: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub proposal_sd: Vec<f64>,
    pub seed: u64,
    /// Cap on real simulator evaluations (the surrogate is free).
    pub max_evals: Option<u64>,
    pub refit_restarts: usize,
}

#[derive(Debug)]
pub struct SurrogateMhResult {
    pub chain: Chain,
    /// The grown design: inputs paired with operator-mapped outputs.
    pub ensemble: Ensemble,
    pub n_sim_evals: u64,
    /// Set when a refit conditioning failure forced always-simulate mode.
    pub fallback: bool,
}

/// Metropolis-Hastings against a GP emulator of the operator-mapped
/// simulator, with an uncertainty-gated escape to the real simulator.
///
/// Each proposal is first checked against the surrogate: when the predictive
/// variance, propagated to the log-likelihood scale, exceeds
/// `variance_threshold`, the simulator is run there, the ensemble grows, and
/// the GP is refit; otherwise the surrogate mean is trusted. The code
/// variance is added to the observation variance inside the likelihood, so
/// surrogate uncertainty widens rather than sharpens the target. Requires an
/// independent-Gaussian observation model.
pub fn surrogate_mh(
    sim: BlackBoxSimulator,
    mut emulator: MultiOutputGp,
    obs: &ObservationSet,
    space: &ParameterSpace,
    cfg: &SurrogateMhConfig,
) -> Result<SurrogateMhResult, CalibrateError> {
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
    let params: BTreeMap<String, f64> = BTreeMap::new();
    let sigmas = match &obs.model {
        crate::observation::ObservationModel::GaussianIid { .. } => {
            obs.model.marginal_variances(obs.len(), &params)?
        }
        _ => {
            return Err(CalibrateError::Config(
                "surrogate MH requires a gaussian-iid observation model".into(),
            ))
        }
    };
    if emulator.output_dim() != obs.len() {
        return Err(CalibrateError::Config(format!(
            "emulator has {} outputs for {} observations",
            emulator.output_dim(),
            obs.len()
        )));
    }

    // training data in raw units, grown as the sampler explores
    let mut x_train = emulator.models[0].x_train_raw();
    let mut y_train: Vec<Vec<f64>> = {
        let cols: Vec<Vec<f64>> = emulator.models.iter().map(|m| m.y_train_raw()).collect();
        (0..x_train.len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    };

    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut n_sim_evals = 0u64;
    let mut fallback = false;
    let mut refit_count = 0u64;

    // variance of the Gaussian log-likelihood induced by per-output code
    // uncertainty: exact for quadratic log-densities
    let score_variance = |means: &[f64], vars: &[f64]| -> f64 {
        means
            .iter()
            .zip(vars)
            .zip(&sigmas)
            .zip(&obs.y)
            .map(|(((m, v), s2), y)| {
                let r = y - m;
                (0.5 * v * v + v * r * r) / (s2 * s2)
            })
            .sum()
    };
    let surrogate_log_lik = |means: &[f64], vars: &[f64]| -> f64 {
        means
            .iter()
            .zip(vars)
            .zip(&sigmas)
            .zip(&obs.y)
            .map(|(((m, v), s2), y)| {
                let total = s2 + v;
                let r = y - m;
                -0.5 * r * r / total
                    - 0.5 * total.ln()
                    - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    };
    let direct_log_lik = |pred: &[f64]| -> f64 {
        pred.iter()
            .zip(&sigmas)
            .zip(&obs.y)
            .map(|((m, s2), y)| {
                let r = y - m;
                -0.5 * r * r / s2 - 0.5 * s2.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .sum()
    };

    let mut rng = rng_from(cfg.seed, 0);
    let mut x = space.prior_mean();
    let mut states = Vec::with_capacity(cfg.n_iter - cfg.burn_in);
    let mut trace = Vec::with_capacity(cfg.n_iter - cfg.burn_in);
    let mut accepted_post = 0u64;

    for iter in 0..cfg.n_iter {
        let proposal: Vec<f64> = x
            .iter()
            .zip(&cfg.proposal_sd)
            .map(|(xi, s)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                xi + s * z
            })
            .collect();

        let lp_prior_new = space.log_prior(&proposal);
        let mut accept = false;
        if lp_prior_new > f64::NEG_INFINITY {
            // uncertainty gate on the proposal
            if !fallback {
                let (means, vars) = emulator.predict(&proposal);
                if score_variance(&means, &vars) > cfg.variance_threshold
                    && n_sim_evals < budget
                {
                    let pred = obs.predict(
                        sim.as_ref(),
                        &proposal,
                        split_seed(cfg.seed, 10_000 + iter as u64),
                    )?;
                    n_sim_evals += 1;
                    x_train.push(proposal.clone());
                    y_train.push(pred);
                    refit_count += 1;
                    match MultiOutputGp::fit(
                        &x_train,
                        &y_train,
                        emulator.models[0].kernel().kind,
                        MeanKind::Constant,
                        NoiseSpec::Fixed(0.0),
                        &FitOptions {
                            restarts: cfg.refit_restarts,
                            seed: split_seed(cfg.seed, 20_000 + refit_count),
                            ..Default::default()
                        },
                    ) {
                        Ok(refit) => emulator = refit,
                        Err(e) => {
                            log::warn!(
                                "surrogate refit failed ({e}); falling back to \
                                 always-simulate mode"
                            );
                            fallback = true;
                        }
                    }
                }
            }

            let (ll_new, ll_cur) = if fallback {
                let pred_new = obs.predict(
                    sim.as_ref(),
                    &proposal,
                    split_seed(cfg.seed, 30_000 + iter as u64),
                )?;
                n_sim_evals += 1;
                let pred_cur = obs.predict(
                    sim.as_ref(),
                    &x,
                    split_seed(cfg.seed, 40_000 + iter as u64),
                )?;
                n_sim_evals += 1;
                (direct_log_lik(&pred_new), direct_log_lik(&pred_cur))
            } else {
                let (means_new, vars_new) = emulator.predict(&proposal);
                let (means_cur, vars_cur) = emulator.predict(&x);
                (
                    surrogate_log_lik(&means_new, &vars_new),
                    surrogate_log_lik(&means_cur, &vars_cur),
                )
            };
            let log_ratio = lp_prior_new + ll_new - space.log_prior(&x) - ll_cur;
            accept = rng.random::<f64>().ln() < log_ratio;
        }
        if accept {
            x = proposal;
        }
        if iter >= cfg.burn_in {
            if accept {
                accepted_post += 1;
            }
            states.push(x.clone());
            let lp = if fallback {
                space.log_prior(&x)
            } else {
                let (means, vars) = emulator.predict(&x);
                space.log_prior(&x) + surrogate_log_lik(&means, &vars)
            };
            trace.push(lp);
        }
    }

    let retained = states.len().max(1);
    let chain = Chain {
        acceptance_rate: accepted_post as f64 / retained as f64,
        states,
        log_post: trace,
        burn_in: cfg.burn_in,
        partial: false,
    };
    let n = x_train.len();
    let ensemble = Ensemble {
        inputs: x_train,
        controls: vec![obs.control.clone(); n],
        outputs: y_train,
        provenance: Provenance {
            seed: cfg.seed,
            method: "surrogate_mh".into(),
            skipped: Vec::new(),
        },
    };
    Ok(SurrogateMhResult {
        chain,
        ensemble,
        n_sim_evals,
        fallback,
    })
}
