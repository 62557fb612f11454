use serde::{Deserialize, Serialize};

use super::particle::ParticleSet;

/// A Metropolis-Hastings sample path after burn-in removal.
///
/// Consecutive equal rows correspond to rejected proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub acceptance_rate: f64,
    /// Number of initial iterations discarded before `states` begins.
    pub burn_in: usize,
    pub partial: bool,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for s in &self.states {
            for j in 0..d {
                mean[j] += s[j];
            }
        }
        for m in &mut mean {
            *m /= self.len() as f64;
        }
        mean
    }

    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let d = self.dim();
        let mut var = vec![0.0; d];
        for s in &self.states {
            for j in 0..d {
                var[j] += (s[j] - mean[j]) * (s[j] - mean[j]);
            }
        }
        for v in &mut var {
            *v /= (self.len() - 1) as f64;
        }
        var
    }

    /// Monte Carlo standard error of the chain mean per dimension, by the
    /// batch-means method (accounts for autocorrelation).
    pub fn mcse_mean(&self) -> Vec<f64> {
        let t = self.len();
        let n_batches = (t as f64).sqrt().floor() as usize;
        if n_batches < 2 {
            return self.variance().iter().map(|v| (v / t as f64).sqrt()).collect();
        }
        let batch = t / n_batches;
        let d = self.dim();
        let mut out = Vec::with_capacity(d);
        for j in 0..d {
            let means: Vec<f64> = (0..n_batches)
                .map(|b| {
                    self.states[b * batch..(b + 1) * batch]
                        .iter()
                        .map(|s| s[j])
                        .sum::<f64>()
                        / batch as f64
                })
                .collect();
            let grand = means.iter().sum::<f64>() / n_batches as f64;
            let var_bm = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>()
                / (n_batches - 1) as f64;
            out.push((var_bm / n_batches as f64).sqrt());
        }
        out
    }

    /// Effective sample size implied by the batch-means variance, minimized
    /// over dimensions.
    pub fn ess(&self) -> f64 {
        let var = self.variance();
        let mcse = self.mcse_mean();
        var.iter()
            .zip(&mcse)
            .map(|(v, se)| if *se > 0.0 { v / (se * se) } else { self.len() as f64 })
            .fold(f64::INFINITY, f64::min)
            .min(self.len() as f64)
    }

    /// Equal-weight particle view of the chain.
    pub fn to_particles(&self) -> ParticleSet {
        let mut set =
            ParticleSet::equal_weights(self.states.clone(), self.log_post.clone(), "mh");
        set.meta.partial = self.partial;
        set
    }
}

/// Split-chain potential scale reduction factor per dimension.
///
/// Chains are merged only for this diagnostic, never into one sample path.
pub fn split_rhat(chains: &[&Chain]) -> Vec<f64> {
    let halves: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .flat_map(|c| {
            let t = c.len() / 2;
            vec![c.states[..t].to_vec(), c.states[t..2 * t].to_vec()]
        })
        .collect();
    let m = halves.len();
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if m < 2 || n < 2 {
        return vec![f64::NAN; chains.first().map_or(0, |c| c.dim())];
    }
    let d = chains[0].dim();
    (0..d)
        .map(|j| {
            let means: Vec<f64> = halves
                .iter()
                .map(|h| h[..n].iter().map(|s| s[j]).sum::<f64>() / n as f64)
                .collect();
            let vars: Vec<f64> = halves
                .iter()
                .zip(&means)
                .map(|(h, mu)| {
                    h[..n].iter().map(|s| (s[j] - mu).powi(2)).sum::<f64>() / (n - 1) as f64
                })
                .collect();
            let grand = means.iter().sum::<f64>() / m as f64;
            let b = n as f64 * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>()
                / (m - 1) as f64;
            let w = vars.iter().sum::<f64>() / m as f64;
            let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
            (var_plus / w).sqrt()
        })
        .collect()
}
