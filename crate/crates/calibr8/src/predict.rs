//! Calibrated prediction by forward-propagating posterior samples, and
//! held-out validation of the resulting predictive distribution.

use std::collections::BTreeMap;

use nalgebra::Cholesky;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{Chain, ParticleSet};
use crate::core::{rng_from, split_seed, ControlInput, Simulator, SimulatorError};
use crate::gp::GpModel;
use crate::observation::{ObservationError, ObservationModel, ObservationOperator};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error("numeric error: {0}")]
    Numeric(String),
}

/// Posterior representation the prediction draws from.
pub enum PosteriorSource<'a> {
    Particles(&'a ParticleSet),
    Chain(&'a Chain),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p05: Vec<f64>,
    pub p50: Vec<f64>,
    pub p95: Vec<f64>,
}

/// Simulated-and-noised future observations drawn under posterior parameter
/// uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSample {
    pub draws: Vec<Vec<f64>>,
    pub quantiles: Quantiles,
    pub control: ControlInput,
    pub source: String,
    pub warnings: Vec<String>,
}

fn quantile_of(sorted: &[f64], p: f64) -> f64 {
    crate::observation::SummaryStatistic::Quantiles { probs: vec![p] }
        .apply(sorted)
        .expect("sorted non-empty")[0]
}

/// Forward-propagate a posterior through the simulator at control input
/// `u_p`: resample `m` parameter points by weight, simulate each once, add a
/// discrepancy draw when a GP discrepancy is supplied (conditioned on its
/// training data, evaluated at `locations`), and add observation noise.
///
/// Weighted resampling handles deterministic and stochastic simulators
/// uniformly: each retained parameter costs exactly one forward run.
#[allow(clippy::too_many_arguments)]
pub fn calibrated_predict(
    sim: &dyn Simulator,
    posterior: PosteriorSource,
    u_p: &ControlInput,
    operator: &ObservationOperator,
    model: &ObservationModel,
    model_params: &BTreeMap<String, f64>,
    m: usize,
    discrepancy: Option<(&GpModel, &[Vec<f64>])>,
    seed: u64,
) -> Result<PredictiveSample, PredictError> {
    if m == 0 {
        return Err(PredictError::Config("m must be >= 1".into()));
    }
    let n_out = operator.len();
    let mut warnings = Vec::new();

    let (points, source_tag): (Vec<Vec<f64>>, String) = match posterior {
        PosteriorSource::Particles(set) => {
            if set.is_empty() {
                return Err(PredictError::Config("posterior is empty".into()));
            }
            if set.ess() < 10.0 {
                warnings.push(format!(
                    "weight degeneracy: posterior ESS {:.2} below 10; predictions may be \
                     unreliable",
                    set.ess()
                ));
            }
            let mut rng = rng_from(seed, 0);
            let indices = set.resample_indices(m, &mut rng);
            (
                indices.iter().map(|&i| set.points[i].clone()).collect(),
                format!("particles:{}", set.meta.method),
            )
        }
        PosteriorSource::Chain(chain) => {
            if chain.is_empty() {
                return Err(PredictError::Config("posterior chain is empty".into()));
            }
            let mut rng = rng_from(seed, 0);
            use rand::Rng;
            let indices: Vec<usize> = (0..m).map(|_| rng.random_range(0..chain.len())).collect();
            (
                indices.iter().map(|&i| chain.states[i].clone()).collect(),
                "chain".to_string(),
            )
        }
    };

    // joint posterior of the discrepancy at the prediction locations,
    // factorized once
    let disc_draw = match discrepancy {
        Some((gp, locations)) => {
            if locations.len() != n_out {
                return Err(PredictError::Config(format!(
                    "{} discrepancy locations for {n_out} outputs",
                    locations.len()
                )));
            }
            let (mean, mut cov) = gp.posterior_mean_cov(locations);
            for i in 0..n_out {
                cov[(i, i)] += 1e-12;
            }
            let chol = Cholesky::new(cov).ok_or_else(|| {
                PredictError::Numeric("discrepancy posterior covariance not PD".into())
            })?;
            Some((mean, chol))
        }
        None => None,
    };

    let run_seed = split_seed(seed, 1);
    let noise_seed = split_seed(seed, 2);
    let disc_seed = split_seed(seed, 3);
    let draws: Vec<Result<Vec<f64>, PredictError>> = points
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let out = sim.run(x, &u_p.values, split_seed(run_seed, j as u64))?;
            let mut pred = operator.apply(&out)?;
            if let Some((mean, chol)) = &disc_draw {
                let mut rng = rng_from(disc_seed, j as u64);
                let z = nalgebra::DVector::from_fn(n_out, |_, _| {
                    rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                });
                let d = mean + chol.l() * z;
                for (p, di) in pred.iter_mut().zip(d.iter()) {
                    *p += di;
                }
            }
            let mut rng = rng_from(noise_seed, j as u64);
            let noise = model.sample_noise(&mut rng, n_out, model_params)?;
            for (p, e) in pred.iter_mut().zip(&noise) {
                *p += e;
            }
            Ok(pred)
        })
        .collect();
    let draws: Vec<Vec<f64>> = draws.into_iter().collect::<Result<_, _>>()?;

    let mut p05 = Vec::with_capacity(n_out);
    let mut p50 = Vec::with_capacity(n_out);
    let mut p95 = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let mut column: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        p05.push(quantile_of(&column, 0.05));
        p50.push(quantile_of(&column, 0.50));
        p95.push(quantile_of(&column, 0.95));
    }

    Ok(PredictiveSample {
        draws,
        quantiles: Quantiles { p05, p50, p95 },
        control: u_p.clone(),
        source: source_tag,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub level: f64,
    pub covered: Vec<bool>,
    pub covered_fraction: f64,
}

/// Held-out validation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub coverage: Vec<CoverageEntry>,
    /// Continuous ranked probability score per output (lower is better).
    pub crps: Vec<f64>,
    /// Outputs whose held-out value falls outside the central 99% interval.
    pub flagged_outputs: Vec<usize>,
    /// False when fewer than 20 draws back the intervals.
    pub reliable: bool,
}

/// Empirical coverage of central predictive intervals and per-output CRPS
/// against a held-out observation vector.
pub fn holdout_validate(
    pred: &PredictiveSample,
    y_test: &[f64],
    levels: &[f64],
) -> Result<ValidationReport, PredictError> {
    let n_out = pred.draws.first().map_or(0, |d| d.len());
    if y_test.len() != n_out {
        return Err(PredictError::Config(format!(
            "y_test has {} entries for {n_out} predicted outputs",
            y_test.len()
        )));
    }
    if levels.iter().any(|l| !(0.0 < *l && *l < 1.0)) {
        return Err(PredictError::Config(
            "coverage levels must lie in (0, 1)".into(),
        ));
    }
    let reliable = pred.draws.len() >= 20;
    if !reliable {
        log::warn!(
            "coverage from {} draws is unreliable (need >= 20)",
            pred.draws.len()
        );
    }

    let mut sorted_columns: Vec<Vec<f64>> = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let mut column: Vec<f64> = pred.draws.iter().map(|d| d[i]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        sorted_columns.push(column);
    }

    let coverage = levels
        .iter()
        .map(|&level| {
            let lo_p = (1.0 - level) / 2.0;
            let hi_p = 1.0 - lo_p;
            let covered: Vec<bool> = sorted_columns
                .iter()
                .zip(y_test)
                .map(|(col, &y)| {
                    let lo = quantile_of(col, lo_p);
                    let hi = quantile_of(col, hi_p);
                    (lo..=hi).contains(&y)
                })
                .collect();
            let covered_fraction = covered.iter().filter(|&&c| c).count() as f64 / n_out as f64;
            CoverageEntry {
                level,
                covered,
                covered_fraction,
            }
        })
        .collect();

    let crps: Vec<f64> = sorted_columns
        .iter()
        .zip(y_test)
        .map(|(col, &y)| sample_crps(col, y))
        .collect();

    let flagged_outputs: Vec<usize> = sorted_columns
        .iter()
        .zip(y_test)
        .enumerate()
        .filter(|(_, (col, &y))| {
            let lo = quantile_of(col, 0.005);
            let hi = quantile_of(col, 0.995);
            y < lo || y > hi
        })
        .map(|(i, _)| i)
        .collect();

    Ok(ValidationReport {
        coverage,
        crps,
        flagged_outputs,
        reliable,
    })
}

/// CRPS of an empirical ensemble: `mean|X - y| - 0.5 mean|X - X'|`, with the
/// pairwise term computed from the sorted sample in O(n).
fn sample_crps(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len() as f64;
    let term1: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
    let pairwise: f64 = sorted
        .iter()
        .enumerate()
        .map(|(j, x)| (2.0 * (j as f64 + 1.0) - n - 1.0) * x)
        .sum::<f64>()
        * 2.0
        / (n * n);
    term1 - 0.5 * pairwise
}
