use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::particle::{ParticleMeta, ParticleSet};
use super::CalibrateError;
use crate::core::{rng_from, split_seed, BlackBoxSimulator};
use crate::observation::ObservationSet;

/// Gaussian posterior approximation `N(mu, Sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianApprox {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl GaussianApprox {
    pub fn validate(&self) -> Result<(), CalibrateError> {
        let d = self.mu.len();
        if self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != d) {
            return Err(CalibrateError::Config("sigma must be d x d".into()));
        }
        let m = DMatrix::from_fn(d, d, |i, j| self.sigma[i][j]);
        if Cholesky::new(m).is_none() {
            return Err(CalibrateError::Conditioning(
                "gaussian approximation covariance is not positive definite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EkiConfig {
    pub n_ensemble: usize,
    /// Iterations of the perturbed-observation update; observation noise is
    /// inflated by this factor so the composed update tempers correctly.
    pub n_iterations: usize,
    pub seed: u64,
    pub max_evals: Option<u64>,
}

impl EkiConfig {
    pub fn new(n_ensemble: usize, seed: u64) -> Self {
        Self {
            n_ensemble,
            n_iterations: 5,
            seed,
            max_evals: None,
        }
    }
}

/// Iterative ensemble Kalman inversion under a Gaussian prior.
///
/// Each iteration runs the simulator on every member, forms the ensemble
/// cross-covariances, and shifts members by the Kalman gain against
/// observations perturbed with inflated noise. Returns the final ensemble
/// and its moment-matched Gaussian approximation; when the ensemble looks
/// bimodal (strongly negative excess kurtosis) a multimodality-risk flag is
/// attached, since a Gaussian summary is then a poor description.
pub fn eki(
    sim: BlackBoxSimulator,
    obs: &ObservationSet,
    prior_mu: &[f64],
    prior_sigma: &[Vec<f64>],
    cfg: &EkiConfig,
) -> Result<(GaussianApprox, ParticleSet), CalibrateError> {
    let d = prior_mu.len();
    if cfg.n_ensemble < d + 2 {
        return Err(CalibrateError::Config(format!(
            "n_ensemble {} below d + 2 = {}",
            cfg.n_ensemble,
            d + 2
        )));
    }
    if !obs.model.is_gaussian() {
        return Err(CalibrateError::Config(
            "ensemble Kalman inversion requires a Gaussian observation model".into(),
        ));
    }
    let n_obs = obs.len();
    let n = cfg.n_ensemble;
    let inflation = cfg.n_iterations as f64;
    let noise = obs.model.noise_cov(n_obs, &Default::default())?;
    let noise_chol = Cholesky::new(noise.clone() * inflation).ok_or_else(|| {
        CalibrateError::Conditioning("inflated noise covariance is not positive definite".into())
    })?;

    let prior = DMatrix::from_fn(d, d, |i, j| prior_sigma[i][j]);
    let prior_chol = Cholesky::new(prior).ok_or_else(|| {
        CalibrateError::Conditioning("prior covariance is not positive definite".into())
    })?;

    let draw_seed = split_seed(cfg.seed, 1);
    let mut members: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut rng = rng_from(draw_seed, i as u64);
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            DVector::from_column_slice(prior_mu) + prior_chol.l() * z
        })
        .collect();

    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut n_evals = 0u64;
    let mut partial = false;

    for iteration in 0..cfg.n_iterations {
        if n_evals + n as u64 > budget {
            partial = true;
            break;
        }
        let eval_seed = split_seed(cfg.seed, 100 + iteration as u64);
        let predictions: Vec<Result<Vec<f64>, CalibrateError>> = members
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                Ok(obs.predict(
                    sim.as_ref(),
                    x.as_slice(),
                    split_seed(eval_seed, i as u64),
                )?)
            })
            .collect();
        n_evals += n as u64;
        let mut g = Vec::with_capacity(n);
        for p in predictions {
            g.push(DVector::from_vec(p?));
        }

        let x_mean = members.iter().sum::<DVector<f64>>() / n as f64;
        let g_mean = g.iter().sum::<DVector<f64>>() / n as f64;
        let mut c_xg = DMatrix::zeros(d, n_obs);
        let mut c_gg = DMatrix::zeros(n_obs, n_obs);
        for (x, gi) in members.iter().zip(&g) {
            let dx = x - &x_mean;
            let dg = gi - &g_mean;
            c_xg += &dx * dg.transpose();
            c_gg += &dg * dg.transpose();
        }
        c_xg /= (n - 1) as f64;
        c_gg /= (n - 1) as f64;

        let innovation_cov = c_gg + noise.clone() * inflation;
        let innovation_chol = Cholesky::new(innovation_cov).ok_or_else(|| {
            CalibrateError::Conditioning(
                "predicted-observation covariance is singular".into(),
            )
        })?;

        let perturb_seed = split_seed(cfg.seed, 200 + iteration as u64);
        let y = DVector::from_column_slice(&obs.y);
        members = members
            .into_par_iter()
            .zip(g.into_par_iter())
            .enumerate()
            .map(|(i, (x, gi))| {
                let mut rng = rng_from(perturb_seed, i as u64);
                let z = DVector::from_fn(n_obs, |_, _| StandardNormal.sample(&mut rng));
                let y_perturbed = &y + noise_chol.l() * z;
                let innovation = y_perturbed - gi;
                // gain applied as C_xg (C_gg + J Sigma)^-1 innovation
                let solved = innovation_chol.solve(&innovation);
                &x + &c_xg * solved
            })
            .collect();
    }

    let x_mean = members.iter().sum::<DVector<f64>>() / n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for x in &members {
        let dx = x - &x_mean;
        cov += &dx * dx.transpose();
    }
    cov /= (n - 1) as f64;

    let approx = GaussianApprox {
        mu: x_mean.iter().copied().collect(),
        sigma: (0..d)
            .map(|i| (0..d).map(|j| cov[(i, j)]).collect())
            .collect(),
    };

    let mut flags = Vec::new();
    for j in 0..d {
        let kurt = excess_kurtosis(members.iter().map(|x| x[j]));
        if kurt < -1.0 {
            flags.push(format!(
                "multimodality-risk: dimension {j} has excess kurtosis {kurt:.2}; the \
                 Gaussian approximation may be poor"
            ));
        }
    }

    let points: Vec<Vec<f64>> = members.iter().map(|x| x.iter().copied().collect()).collect();
    let mut set = ParticleSet::equal_weights(points, Vec::new(), "eki");
    set.meta = ParticleMeta {
        method: "eki".into(),
        schedule: Vec::new(),
        n_proposed: n as u64,
        n_accepted: n as u64,
        n_evals,
        ess: set.ess(),
        partial,
        flags,
    };
    set.validate()?;
    Ok((approx, set))
}

fn excess_kurtosis(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{make_bimodal, make_linear_gaussian};

    #[test]
    fn linear_case_matches_conjugate_posterior() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![1.0]);
        let (approx, particles) = eki(
            problem.simulator.clone(),
            &obs,
            &[0.0],
            &[vec![1.0]],
            &EkiConfig {
                n_iterations: 1,
                ..EkiConfig::new(2000, 3)
            },
        )
        .unwrap();
        assert!((approx.mu[0] - 0.5).abs() < 0.05, "mean {}", approx.mu[0]);
        assert!(
            (approx.sigma[0][0] - 0.5).abs() < 0.05,
            "variance {}",
            approx.sigma[0][0]
        );
        assert_eq!(particles.len(), 2000);
        approx.validate().unwrap();
    }

    #[test]
    fn zero_innovation_keeps_prior_mean() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![0.0]);
        let (approx, _) = eki(
            problem.simulator.clone(),
            &obs,
            &[0.0],
            &[vec![1.0]],
            &EkiConfig::new(2000, 5),
        )
        .unwrap();
        assert!(approx.mu[0].abs() < 0.05, "mean {}", approx.mu[0]);
    }

    #[test]
    fn bimodal_target_raises_multimodality_flag() {
        let problem = make_bimodal();
        let obs = problem.observation(vec![1.0]);
        let (_, particles) = eki(
            problem.simulator.clone(),
            &obs,
            &[0.0],
            &[vec![2.0]],
            &EkiConfig::new(1000, 11),
        )
        .unwrap();
        assert!(
            particles
                .meta
                .flags
                .iter()
                .any(|f| f.contains("multimodality-risk")),
            "flags: {:?}",
            particles.meta.flags
        );
    }

    #[test]
    fn small_ensemble_is_config_error() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![0.0]);
        let err = eki(
            problem.simulator.clone(),
            &obs,
            &[0.0],
            &[vec![1.0]],
            &EkiConfig::new(2, 0),
        );
        assert!(matches!(err, Err(CalibrateError::Config(_))));
    }
}
