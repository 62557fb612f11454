use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CalibrateError;

/// Run metadata attached to a particle set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleMeta {
    pub method: String,
    /// Realized temperature or tolerance schedule, when the method has one.
    pub schedule: Vec<f64>,
    pub n_proposed: u64,
    pub n_accepted: u64,
    /// Objective/simulator evaluations spent by the engine.
    pub n_evals: u64,
    pub ess: f64,
    pub partial: bool,
    pub flags: Vec<String>,
}

/// Weighted posterior (or NROY) representation shared by MCMC, SMC, ABC and
/// EKI outputs. Weights are normalized to sum to one; expectations follow the
/// weighted-sum contract `E[h] ~ sum_i w_i h(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Per-point unnormalized log-posterior when the method provides one,
    /// `NaN` otherwise (e.g. ABC and EKI particles).
    pub log_post: Vec<f64>,
    pub meta: ParticleMeta,
}

impl ParticleSet {
    /// Equal-weight particle set.
    pub fn equal_weights(points: Vec<Vec<f64>>, log_post: Vec<f64>, method: &str) -> Self {
        let n = points.len();
        let log_post = if log_post.is_empty() {
            vec![f64::NAN; n]
        } else {
            log_post
        };
        let mut set = Self {
            points,
            weights: vec![1.0 / n as f64; n],
            log_post,
            meta: ParticleMeta {
                method: method.into(),
                ..Default::default()
            },
        };
        set.meta.ess = set.ess();
        set
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn validate(&self) -> Result<(), CalibrateError> {
        if self.points.len() != self.weights.len() || self.points.len() != self.log_post.len() {
            return Err(CalibrateError::Config(
                "points, weights, and log_post lengths differ".into(),
            ));
        }
        if self.weights.iter().any(|&w| w < 0.0) {
            return Err(CalibrateError::Config("negative particle weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(CalibrateError::Config(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        let ess = self.ess();
        if !(1.0 - 1e-9..=self.len() as f64 + 1e-9).contains(&ess) {
            return Err(CalibrateError::Config(format!(
                "effective sample size {ess} outside [1, {}]",
                self.len()
            )));
        }
        Ok(())
    }

    /// Effective sample size `1 / sum w_i^2`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weighted_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for j in 0..d {
                mean[j] += w * p[j];
            }
        }
        mean
    }

    /// Per-dimension weighted variance.
    pub fn weighted_variance(&self) -> Vec<f64> {
        let mean = self.weighted_mean();
        let d = self.dim();
        let mut var = vec![0.0; d];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for j in 0..d {
                var[j] += w * (p[j] - mean[j]) * (p[j] - mean[j]);
            }
        }
        var
    }

    pub fn weighted_cov(&self) -> DMatrix<f64> {
        let mean = self.weighted_mean();
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += w * (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        cov
    }

    /// Monte Carlo standard error of the weighted mean, per dimension,
    /// using the effective sample size.
    pub fn mean_se(&self) -> Vec<f64> {
        let ess = self.ess();
        self.weighted_variance()
            .iter()
            .map(|v| (v / ess).sqrt())
            .collect()
    }

    /// Systematic resampling: `m` indices drawn with one uniform offset.
    pub fn resample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<usize> {
        let u: f64 = rng.random::<f64>() / m as f64;
        let mut indices = Vec::with_capacity(m);
        let mut cumulative = self.weights[0];
        let mut i = 0;
        for k in 0..m {
            let position = u + k as f64 / m as f64;
            while position > cumulative && i + 1 < self.len() {
                i += 1;
                cumulative += self.weights[i];
            }
            indices.push(i);
        }
        indices
    }
}
