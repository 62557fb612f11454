use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::particle::{ParticleMeta, ParticleSet};
use super::{CalibrateError, Objective};
use crate::core::{rng_from, split_seed, ParameterSpace};
use crate::observation::log_sum_exp;

/// Target sequence the sampler anneals through.
pub enum SmcTarget<'a> {
    /// `pi_beta ~ prior * likelihood^beta`, `beta: 0 -> 1`.
    Tempering { log_lik: Objective<'a> },
    /// `pi_tau ~ prior * 1{score < tau}` with decreasing tolerances.
    AbcTolerance { score: Objective<'a> },
}

#[derive(Debug, Clone)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// Explicit schedule: ascending betas ending at 1, or decreasing taus.
    /// Ignored when `adaptive` is set.
    pub schedule: Vec<f64>,
    /// Choose each next beta or tau so the reweighting ESS lands near
    /// `n_particles / 2`.
    pub adaptive: bool,
    /// Adaptive ABC only: stop once the tolerance reaches this value.
    pub target_final: Option<f64>,
    pub max_stages: usize,
    /// Metropolis moves per particle per stage.
    pub mh_moves: usize,
    pub seed: u64,
    pub max_evals: Option<u64>,
}

impl SmcConfig {
    pub fn tempering_adaptive(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            schedule: Vec::new(),
            adaptive: true,
            target_final: None,
            max_stages: 40,
            mh_moves: 2,
            seed,
            max_evals: None,
        }
    }

    pub fn abc_adaptive(n_particles: usize, final_tau: f64, seed: u64) -> Self {
        Self {
            n_particles,
            schedule: Vec::new(),
            adaptive: true,
            target_final: Some(final_tau),
            max_stages: 40,
            mh_moves: 2,
            seed,
            max_evals: None,
        }
    }
}

const SALT_DRAW: u64 = 1;
const SALT_EVAL: u64 = 2;
const SALT_RESAMPLE: u64 = 3;
const SALT_MOVE: u64 = 4;

/// Sequential Monte Carlo with an importance-weight / resample / move cycle
/// per stage. The final set targets the posterior (`beta = 1`) or the ABC
/// posterior at the last tolerance; posterior expectations follow the
/// weighted-sum contract.
pub fn smc(
    target: SmcTarget,
    space: &ParameterSpace,
    cfg: &SmcConfig,
) -> Result<ParticleSet, CalibrateError> {
    if cfg.n_particles < 50 {
        return Err(CalibrateError::Config(format!(
            "n_particles {} below the minimum 50",
            cfg.n_particles
        )));
    }
    if !cfg.adaptive && cfg.schedule.is_empty() {
        return Err(CalibrateError::Config(
            "non-adaptive SMC needs an explicit schedule".into(),
        ));
    }
    match target {
        SmcTarget::Tempering { log_lik } => run_tempering(log_lik, space, cfg),
        SmcTarget::AbcTolerance { score } => run_abc(score, space, cfg),
    }
}

struct Cloud {
    points: Vec<Vec<f64>>,
    /// Cached objective values (log-likelihoods or scores).
    values: Vec<f64>,
    n_evals: u64,
}

fn init_cloud(
    objective: Objective,
    space: &ParameterSpace,
    cfg: &SmcConfig,
) -> Result<Cloud, CalibrateError> {
    let draw_seed = split_seed(cfg.seed, SALT_DRAW);
    let eval_seed = split_seed(cfg.seed, SALT_EVAL);
    let results: Vec<(Vec<f64>, Result<f64, CalibrateError>)> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(draw_seed, i as u64);
            let x = space.sample_prior(&mut rng);
            let v = objective(&x, split_seed(eval_seed, i as u64));
            (x, v)
        })
        .collect();
    let mut points = Vec::with_capacity(cfg.n_particles);
    let mut values = Vec::with_capacity(cfg.n_particles);
    for (x, v) in results {
        points.push(x);
        values.push(v?);
    }
    Ok(Cloud {
        points,
        values,
        n_evals: cfg.n_particles as u64,
    })
}

/// Stage-local random-walk scale from the weighted particle covariance.
fn stage_proposal_sd(
    points: &[Vec<f64>],
    weights: &[f64],
    space: &ParameterSpace,
) -> Vec<f64> {
    let d = space.dim();
    let mut mean = vec![0.0; d];
    for (p, &w) in points.iter().zip(weights) {
        for j in 0..d {
            mean[j] += w * p[j];
        }
    }
    let mut var = vec![0.0; d];
    for (p, &w) in points.iter().zip(weights) {
        for j in 0..d {
            var[j] += w * (p[j] - mean[j]) * (p[j] - mean[j]);
        }
    }
    let scale = 2.38 / (d as f64).sqrt();
    let prior_sd = space.prior_sd();
    (0..d)
        .map(|j| {
            let sd = var[j].sqrt() * scale;
            if sd > 1e-12 {
                sd
            } else {
                0.1 * prior_sd[j]
            }
        })
        .collect()
}

fn normalized_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64), CalibrateError> {
    let total = log_sum_exp(log_w);
    if total == f64::NEG_INFINITY {
        return Err(CalibrateError::Degeneracy(
            "all particle weights vanished".into(),
        ));
    }
    let weights: Vec<f64> = log_w.iter().map(|lw| (lw - total).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok((weights, ess))
}

fn resample(cloud: &Cloud, weights: &[f64], stage: usize, cfg: &SmcConfig) -> Cloud {
    let mut rng = rng_from(split_seed(cfg.seed, SALT_RESAMPLE), stage as u64);
    let n = cloud.points.len();
    let u: f64 = rng.random::<f64>() / n as f64;
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let position = u + k as f64 / n as f64;
        while position > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        indices.push(i);
    }
    Cloud {
        points: indices.iter().map(|&i| cloud.points[i].clone()).collect(),
        values: indices.iter().map(|&i| cloud.values[i]).collect(),
        n_evals: cloud.n_evals,
    }
}

fn run_tempering(
    log_lik: Objective,
    space: &ParameterSpace,
    cfg: &SmcConfig,
) -> Result<ParticleSet, CalibrateError> {
    let mut cloud = init_cloud(log_lik, space, cfg)?;
    let n = cfg.n_particles;
    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut beta = 0.0;
    let mut schedule_realized = vec![0.0];
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut partial = false;
    let mut fixed_iter = cfg.schedule.iter().copied();

    for stage in 0..cfg.max_stages {
        if beta >= 1.0 {
            break;
        }
        let move_cost = (cfg.mh_moves * n) as u64;
        if cloud.n_evals + move_cost > budget {
            partial = true;
            break;
        }

        let beta_next = if cfg.adaptive {
            choose_beta(&cloud.values, beta, n)
        } else {
            match fixed_iter.next() {
                Some(b) => b.min(1.0),
                None => {
                    partial = true;
                    break;
                }
            }
        };
        let delta = beta_next - beta;
        if !(delta > 0.0) {
            return Err(CalibrateError::Config(format!(
                "schedule must increase: beta {beta} -> {beta_next}"
            )));
        }
        let log_w: Vec<f64> = cloud.values.iter().map(|ll| delta * ll).collect();
        let (weights, ess) = normalized_weights(&log_w)?;
        if ess < 5.0 {
            return Err(CalibrateError::Degeneracy(format!(
                "ESS {ess:.2} below 5 at stage {stage} (beta {beta_next:.4})"
            )));
        }
        let sd = stage_proposal_sd(&cloud.points, &weights, space);
        cloud = resample(&cloud, &weights, stage, cfg);

        for mv in 0..cfg.mh_moves {
            let move_seed = split_seed(split_seed(cfg.seed, SALT_MOVE), (stage * 97 + mv) as u64);
            let results: Vec<Result<(Vec<f64>, f64, bool), CalibrateError>> = cloud
                .points
                .par_iter()
                .zip(cloud.values.par_iter())
                .enumerate()
                .map(|(i, (x, &ll))| {
                    let mut rng = rng_from(move_seed, i as u64);
                    let proposal: Vec<f64> = x
                        .iter()
                        .zip(&sd)
                        .map(|(xi, s)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            xi + s * z
                        })
                        .collect();
                    let lp_new = space.log_prior(&proposal);
                    if lp_new == f64::NEG_INFINITY {
                        return Ok((x.clone(), ll, false));
                    }
                    let ll_new = log_lik(&proposal, split_seed(move_seed, (n + i) as u64))?;
                    let lp_old = space.log_prior(x);
                    let log_ratio = lp_new + beta_next * ll_new - lp_old - beta_next * ll;
                    if rng.random::<f64>().ln() < log_ratio {
                        Ok((proposal, ll_new, true))
                    } else {
                        Ok((x.clone(), ll, false))
                    }
                })
                .collect();
            cloud.n_evals += n as u64;
            let mut new_points = Vec::with_capacity(n);
            let mut new_values = Vec::with_capacity(n);
            for r in results {
                let (x, ll, acc) = r?;
                proposed += 1;
                if acc {
                    accepted += 1;
                }
                new_points.push(x);
                new_values.push(ll);
            }
            cloud.points = new_points;
            cloud.values = new_values;
        }
        beta = beta_next;
        schedule_realized.push(beta);
    }
    if beta < 1.0 {
        partial = true;
    }

    let log_post: Vec<f64> = cloud
        .points
        .iter()
        .zip(&cloud.values)
        .map(|(x, ll)| space.log_prior(x) + beta * ll)
        .collect();
    let mut set = ParticleSet::equal_weights(cloud.points, log_post, "smc");
    set.meta = ParticleMeta {
        method: "smc".into(),
        schedule: schedule_realized,
        n_proposed: proposed,
        n_accepted: accepted,
        n_evals: cloud.n_evals,
        ess: set.ess(),
        partial,
        flags: Vec::new(),
    };
    set.validate()?;
    Ok(set)
}

/// Largest `beta' <= 1` whose incremental weights keep ESS near `n/2`.
fn choose_beta(log_liks: &[f64], beta: f64, n: usize) -> f64 {
    let target = n as f64 / 2.0;
    let ess_at = |delta: f64| -> f64 {
        let lw: Vec<f64> = log_liks.iter().map(|ll| delta * ll).collect();
        match normalized_weights(&lw) {
            Ok((_, ess)) => ess,
            Err(_) => 0.0,
        }
    };
    let full = 1.0 - beta;
    if ess_at(full) >= target {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, full);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ess_at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // a zero step would stall the sampler on spiky likelihoods
    beta + lo.max(full * 1e-6)
}

fn run_abc(
    score: Objective,
    space: &ParameterSpace,
    cfg: &SmcConfig,
) -> Result<ParticleSet, CalibrateError> {
    let mut cloud = init_cloud(score, space, cfg)?;
    let n = cfg.n_particles;
    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut tau = f64::INFINITY;
    let mut schedule_realized = Vec::new();
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    let mut partial = false;
    let mut fixed_iter = cfg.schedule.iter().copied();

    for stage in 0..cfg.max_stages {
        let move_cost = (cfg.mh_moves * n) as u64;
        if cloud.n_evals + move_cost > budget {
            partial = true;
            break;
        }
        let (tau_next, is_last) = if cfg.adaptive {
            match choose_tau(&cloud.values, tau, cfg.target_final) {
                Some(pair) => pair,
                None => break,
            }
        } else {
            match fixed_iter.next() {
                Some(t) => {
                    if t >= tau {
                        return Err(CalibrateError::Config(format!(
                            "tolerances must decrease: {tau} -> {t}"
                        )));
                    }
                    (t, false)
                }
                None => break,
            }
        };

        let log_w: Vec<f64> = cloud
            .values
            .iter()
            .map(|&s| if s < tau_next { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let (weights, ess) = match normalized_weights(&log_w) {
            Ok(pair) => pair,
            Err(_) => {
                return Err(CalibrateError::Degeneracy(format!(
                    "no particle satisfies tolerance {tau_next}"
                )))
            }
        };
        if ess < 5.0 {
            return Err(CalibrateError::Degeneracy(format!(
                "ESS {ess:.2} below 5 at tolerance {tau_next}"
            )));
        }
        let sd = stage_proposal_sd(&cloud.points, &weights, space);
        cloud = resample(&cloud, &weights, stage, cfg);

        for mv in 0..cfg.mh_moves {
            let move_seed =
                split_seed(split_seed(cfg.seed, SALT_MOVE), (stage * 97 + mv) as u64);
            let results: Vec<Result<(Vec<f64>, f64, bool), CalibrateError>> = cloud
                .points
                .par_iter()
                .zip(cloud.values.par_iter())
                .enumerate()
                .map(|(i, (x, &s))| {
                    let mut rng = rng_from(move_seed, i as u64);
                    let proposal: Vec<f64> = x
                        .iter()
                        .zip(&sd)
                        .map(|(xi, sig)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            xi + sig * z
                        })
                        .collect();
                    let lp_new = space.log_prior(&proposal);
                    if lp_new == f64::NEG_INFINITY {
                        return Ok((x.clone(), s, false));
                    }
                    let s_new = score(&proposal, split_seed(move_seed, (n + i) as u64))?;
                    let lp_old = space.log_prior(x);
                    let mh_ok = rng.random::<f64>().ln() < lp_new - lp_old;
                    if s_new < tau_next && mh_ok {
                        Ok((proposal, s_new, true))
                    } else {
                        Ok((x.clone(), s, false))
                    }
                })
                .collect();
            cloud.n_evals += n as u64;
            let mut new_points = Vec::with_capacity(n);
            let mut new_values = Vec::with_capacity(n);
            for r in results {
                let (x, s, acc) = r?;
                proposed += 1;
                if acc {
                    accepted += 1;
                }
                new_points.push(x);
                new_values.push(s);
            }
            cloud.points = new_points;
            cloud.values = new_values;
        }
        tau = tau_next;
        schedule_realized.push(tau);
        if is_last {
            break;
        }
    }
    if let Some(final_tau) = cfg.target_final {
        if tau > final_tau {
            partial = true;
        }
    }

    let mut set = ParticleSet::equal_weights(cloud.points, Vec::new(), "smc-abc");
    set.meta = ParticleMeta {
        method: "smc-abc".into(),
        schedule: schedule_realized,
        n_proposed: proposed,
        n_accepted: accepted,
        n_evals: cloud.n_evals,
        ess: set.ess(),
        partial,
        flags: Vec::new(),
    };
    set.validate()?;
    Ok(set)
}

/// Next tolerance: the score median, adjusted for ties so the strict-`<`
/// survivor set stays non-empty; clamps to `target_final` when it would pass
/// it. Returns `None` when the tolerances can no longer decrease.
fn choose_tau(scores: &[f64], tau: f64, target_final: Option<f64>) -> Option<(f64, bool)> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable scores"));
    let n = sorted.len();
    let mut candidate = sorted[n / 2];
    let min = sorted[0];
    if candidate <= min {
        // over half the cloud ties at the minimum; keep exactly those
        match sorted.iter().find(|&&v| v > min) {
            Some(&next) => candidate = next,
            None => return None,
        }
    }
    if candidate >= tau {
        return None;
    }
    match target_final {
        Some(t) if candidate <= t => {
            if t < tau && scores.iter().any(|&s| s < t) {
                Some((t, true))
            } else if scores.iter().any(|&s| s < candidate) && candidate < tau {
                // cannot reach the target yet without emptying the cloud
                Some((candidate, false))
            } else {
                None
            }
        }
        _ => Some((candidate, false)),
    }
}
