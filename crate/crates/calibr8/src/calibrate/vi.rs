use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{CalibrateError, Objective};
use crate::core::{rng_from, ParameterSpace, PriorSpec};

/// Mean-field Gaussian variational family: independent `N(mu_i, sigma_i^2)`
/// marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Step-size schedule `init / (1 + decay * t)` for the stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub init: f64,
    pub decay: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            init: 0.05,
            decay: 1e-3,
        }
    }
}

/// What the objective callable returns.
pub enum ViTarget<'a> {
    /// Full unnormalized log-posterior; the entropy term is handled
    /// analytically and the prior contribution rides inside the callable.
    LogPosterior(Objective<'a>),
    /// Log-likelihood only; `KL(q || prior)` comes in closed form from the
    /// per-dimension priors of the space (box truncation is ignored in the
    /// closed form, which is exact whenever `q` stays inside the box).
    LogLikelihood(Objective<'a>),
}

#[derive(Debug, Clone)]
pub struct ViConfig {
    pub steps: usize,
    /// Monte Carlo draws per gradient step.
    pub mc_samples: usize,
    pub step: StepSchedule,
    pub seed: u64,
    pub max_evals: Option<u64>,
}

impl ViConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            mc_samples: 32,
            step: StepSchedule::default(),
            seed,
            max_evals: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViResult {
    pub params: VariationalParams,
    /// Per-step ELBO estimates.
    pub elbo_trace: Vec<f64>,
    pub n_evals: u64,
    pub partial: bool,
}

/// Maximize the ELBO over the mean-field Gaussian family by stochastic
/// gradient ascent with the score-function (likelihood-ratio) estimator —
/// zeroth-order in the simulator — using a moving-average baseline for
/// variance reduction and Adam updates on `(mu, log sigma)`.
pub fn meanfield_vi(
    target: ViTarget,
    space: &ParameterSpace,
    cfg: &ViConfig,
) -> Result<ViResult, CalibrateError> {
    let d = space.dim();
    if cfg.mc_samples < 2 {
        return Err(CalibrateError::Config("mc_samples must be >= 2".into()));
    }
    let mut mu = space.prior_mean();
    let mut rho: Vec<f64> = space.prior_sd().iter().map(|s| (0.5 * s).ln()).collect();

    // Adam state over the packed vector [mu, rho]
    let mut m_adam = vec![0.0; 2 * d];
    let mut v_adam = vec![0.0; 2 * d];
    let (beta1, beta2, eps_adam) = (0.9, 0.999, 1e-8);

    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut n_evals = 0u64;
    let mut partial = false;
    let mut baseline: Option<f64> = None;
    let mut elbo_trace = Vec::with_capacity(cfg.steps);
    let mut bad_streak = 0usize;

    for step in 0..cfg.steps {
        if n_evals + cfg.mc_samples as u64 > budget {
            partial = true;
            break;
        }
        let mut rng = rng_from(cfg.seed, step as u64);
        let sigma: Vec<f64> = rho.iter().map(|r| r.exp()).collect();

        let mut zs = Vec::with_capacity(cfg.mc_samples);
        let mut fs = Vec::with_capacity(cfg.mc_samples);
        for s in 0..cfg.mc_samples {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x: Vec<f64> = mu
                .iter()
                .zip(&sigma)
                .zip(&z)
                .map(|((m, s), zi)| m + s * zi)
                .collect();
            let objective = match &target {
                ViTarget::LogPosterior(f) | ViTarget::LogLikelihood(f) => f,
            };
            let f = objective(&x, crate::core::split_seed(cfg.seed, (step * cfg.mc_samples + s) as u64))?;
            n_evals += 1;
            zs.push(z);
            fs.push(f);
        }

        // clip -inf draws (out-of-support samples) against the baseline so
        // one bad draw cannot produce an infinite gradient
        let finite_mean = {
            let finite: Vec<f64> = fs.iter().copied().filter(|f| f.is_finite()).collect();
            if finite.is_empty() {
                None
            } else {
                Some(finite.iter().sum::<f64>() / finite.len() as f64)
            }
        };
        let Some(finite_mean) = finite_mean else {
            bad_streak += 1;
            if bad_streak >= 5 {
                return Err(CalibrateError::Calibration(
                    "ELBO diverged to -inf; try smaller steps or a tighter \
                     initialization"
                        .into(),
                ));
            }
            continue;
        };
        bad_streak = 0;
        let b = baseline.unwrap_or(finite_mean);
        let floor = b - 100.0 * (1.0 + b.abs());
        let fs_clipped: Vec<f64> = fs.iter().map(|f| f.max(floor)).collect();

        // score-function gradient with baseline
        let mut grad = vec![0.0; 2 * d];
        for (z, &f) in zs.iter().zip(&fs_clipped) {
            let advantage = f - b;
            for j in 0..d {
                grad[j] += advantage * z[j] / sigma[j];
                grad[d + j] += advantage * (z[j] * z[j] - 1.0);
            }
        }
        for g in &mut grad {
            *g /= cfg.mc_samples as f64;
        }

        // analytic entropy / KL part
        let mut analytic = 0.0;
        match &target {
            ViTarget::LogPosterior(_) => {
                for j in 0..d {
                    grad[d + j] += 1.0;
                    analytic += 0.5
                        * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma[j] * sigma[j])
                            .ln();
                }
            }
            ViTarget::LogLikelihood(_) => {
                for (j, dim) in space.dims().iter().enumerate() {
                    let (g_mu, g_rho, neg_kl) =
                        neg_kl_and_grad(&dim.prior, dim.lower, dim.upper, mu[j], sigma[j]);
                    grad[j] += g_mu;
                    grad[d + j] += g_rho;
                    analytic += neg_kl;
                }
            }
        }

        let elbo = finite_mean + analytic;
        elbo_trace.push(elbo);
        if !elbo.is_finite() {
            return Err(CalibrateError::Calibration(
                "ELBO diverged; try smaller steps".into(),
            ));
        }
        baseline = Some(match baseline {
            Some(prev) => 0.9 * prev + 0.1 * finite_mean,
            None => finite_mean,
        });

        // Adam ascent
        let lr = cfg.step.init / (1.0 + cfg.step.decay * step as f64);
        let t = (step + 1) as i32;
        for j in 0..2 * d {
            m_adam[j] = beta1 * m_adam[j] + (1.0 - beta1) * grad[j];
            v_adam[j] = beta2 * v_adam[j] + (1.0 - beta2) * grad[j] * grad[j];
            let m_hat = m_adam[j] / (1.0 - beta1.powi(t));
            let v_hat = v_adam[j] / (1.0 - beta2.powi(t));
            let delta = lr * m_hat / (v_hat.sqrt() + eps_adam);
            if j < d {
                mu[j] += delta;
            } else {
                rho[j - d] = (rho[j - d] + delta).clamp(-18.0, 18.0);
            }
        }
    }

    Ok(ViResult {
        params: VariationalParams {
            mu,
            sigma: rho.iter().map(|r| r.exp()).collect(),
        },
        elbo_trace,
        n_evals,
        partial,
    })
}

/// `-KL(N(mu, sigma^2) || prior)` and its gradient in `(mu, log sigma)`.
///
/// Truncation of the prior to the box contributes only a constant (the log
/// normalizer), which is included in the value and vanishes from gradients.
fn neg_kl_and_grad(
    prior: &PriorSpec,
    lower: f64,
    upper: f64,
    mu: f64,
    sigma: f64,
) -> (f64, f64, f64) {
    let entropy =
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
    match prior {
        PriorSpec::Uniform => {
            let value = entropy - (upper - lower).ln();
            (0.0, 1.0, value)
        }
        PriorSpec::TruncatedNormal { mean, sd } => {
            let norm = Normal::standard();
            let z = norm.cdf((upper - mean) / sd) - norm.cdf((lower - mean) / sd);
            let value = sigma.ln() - sd.ln()
                - (sigma * sigma + (mu - mean) * (mu - mean)) / (2.0 * sd * sd)
                + 0.5
                - z.ln();
            let g_mu = -(mu - mean) / (sd * sd);
            let g_rho = 1.0 - sigma * sigma / (sd * sd);
            (g_mu, g_rho, value)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ParamDim;

    fn wide_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(
            (0..d)
                .map(|j| ParamDim::uniform(&format!("x{j}"), -20.0, 20.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn recovers_diagonal_gaussian_target() {
        let space = wide_space(2);
        let target = |x: &[f64], _: u64| -> Result<f64, CalibrateError> {
            Ok(-0.5 * (x[0] - 1.0).powi(2) / 0.25 - 0.5 * (x[1] - 2.0).powi(2) / 4.0)
        };
        let result = meanfield_vi(
            ViTarget::LogPosterior(&target),
            &space,
            &ViConfig::new(4000, 1),
        )
        .unwrap();
        let p = &result.params;
        assert!((p.mu[0] - 1.0).abs() < 0.05, "mu0 {}", p.mu[0]);
        assert!((p.mu[1] - 2.0).abs() < 0.05, "mu1 {}", p.mu[1]);
        assert!((p.sigma[0] - 0.5).abs() / 0.5 < 0.10, "sigma0 {}", p.sigma[0]);
        assert!((p.sigma[1] - 2.0).abs() / 2.0 < 0.10, "sigma1 {}", p.sigma[1]);
    }

    #[test]
    fn flat_likelihood_converges_to_prior_moments() {
        // with a constant likelihood the optimum of the ELBO is the
        // moment-matched Gaussian of the (truncated-normal) prior
        let space = ParameterSpace::new(vec![ParamDim::truncated_normal(
            "x", -30.0, 30.0, 0.7, 1.3,
        )])
        .unwrap();
        let target = |_: &[f64], _: u64| -> Result<f64, CalibrateError> { Ok(0.0) };
        let result = meanfield_vi(
            ViTarget::LogLikelihood(&target),
            &space,
            &ViConfig::new(3000, 5),
        )
        .unwrap();
        let p = &result.params;
        assert!((p.mu[0] - 0.7).abs() < 0.05, "mu {}", p.mu[0]);
        assert!((p.sigma[0] - 1.3).abs() / 1.3 < 0.10, "sigma {}", p.sigma[0]);
    }

    #[test]
    fn correlated_target_shrinks_marginal_sigmas() {
        // mean-field fit to a correlated Gaussian matches the precision
        // diagonal: sigma_i^2 = 1 - rho^2, below the true marginal variance 1
        let rho = 0.9;
        let space = wide_space(2);
        let target = move |x: &[f64], _: u64| -> Result<f64, CalibrateError> {
            let q = (x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1])
                / (1.0 - rho * rho);
            Ok(-0.5 * q)
        };
        let result = meanfield_vi(
            ViTarget::LogPosterior(&target),
            &space,
            &ViConfig::new(4000, 9),
        )
        .unwrap();
        let expected = (1.0 - rho * rho).sqrt();
        for j in 0..2 {
            let s = result.params.sigma[j];
            assert!(
                (s - expected).abs() / expected < 0.10,
                "sigma[{j}] = {s}, closed-form mean-field value {expected}"
            );
            assert!(s < 0.7, "sigma[{j}] should underestimate the unit marginal");
        }
    }

    #[test]
    fn elbo_trend_is_non_decreasing_late_in_training() {
        let space = wide_space(1);
        let target = |x: &[f64], _: u64| -> Result<f64, CalibrateError> {
            Ok(-0.5 * (x[0] - 3.0).powi(2))
        };
        let result = meanfield_vi(
            ViTarget::LogPosterior(&target),
            &space,
            &ViConfig::new(2000, 2),
        )
        .unwrap();
        let trace = &result.elbo_trace;
        let window = 50;
        let smoothed: Vec<f64> = trace
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        let half = smoothed.len() / 2;
        let early = smoothed[half];
        let late = *smoothed.last().unwrap();
        assert!(
            late >= early - 0.05,
            "smoothed ELBO fell from {early} to {late} over the final half"
        );
    }

    #[test]
    fn budget_truncates_with_flag() {
        let space = wide_space(1);
        let target = |x: &[f64], _: u64| -> Result<f64, CalibrateError> {
            Ok(-0.5 * x[0] * x[0])
        };
        let result = meanfield_vi(
            ViTarget::LogPosterior(&target),
            &space,
            &ViConfig {
                max_evals: Some(100),
                ..ViConfig::new(1000, 0)
            },
        )
        .unwrap();
        assert!(result.partial);
        assert!(result.n_evals <= 100);
    }
}
