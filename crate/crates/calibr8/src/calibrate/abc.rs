use rayon::prelude::*;

use super::particle::{ParticleMeta, ParticleSet};
use super::{CalibrateError, Objective};
use crate::core::{rng_from, split_seed, ParameterSpace};
use crate::scores::AcceptanceRule;

#[derive(Debug, Clone)]
pub struct AbcConfig {
    pub n_sims: usize,
    pub rule: AcceptanceRule,
    pub seed: u64,
    pub max_evals: Option<u64>,
}

/// Rejection ABC: draw from the prior, simulate, score, threshold.
///
/// Draws and scores use per-index split seeds and run in parallel without
/// affecting results. Accepted particles carry equal weights; their
/// `log_post` entries are `NaN` (no likelihood is ever evaluated).
pub fn abc_rejection(
    score: Objective,
    space: &ParameterSpace,
    cfg: &AbcConfig,
) -> Result<ParticleSet, CalibrateError> {
    cfg.rule.validate()?;
    if matches!(cfg.rule, AcceptanceRule::Quantile { .. }) && cfg.n_sims < 100 {
        return Err(CalibrateError::Config(format!(
            "quantile rules need n_sims >= 100, got {}",
            cfg.n_sims
        )));
    }
    let allowed = match cfg.max_evals {
        Some(b) => (b as usize).min(cfg.n_sims),
        None => cfg.n_sims,
    };
    if allowed == 0 {
        return Err(CalibrateError::Config(
            "evaluation budget admits no simulations".into(),
        ));
    }
    let partial = allowed < cfg.n_sims;

    let drawn: Vec<(Vec<f64>, Result<f64, CalibrateError>)> = (0..allowed)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(cfg.seed, 2 * i as u64);
            let x = space.sample_prior(&mut rng);
            let s = score(&x, split_seed(cfg.seed, 2 * i as u64 + 1));
            (x, s)
        })
        .collect();

    let mut points = Vec::with_capacity(allowed);
    let mut scores = Vec::with_capacity(allowed);
    for (x, s) in drawn {
        points.push(x);
        scores.push(s?);
    }

    let flags = cfg.rule.accept_set(&scores)?;
    let accepted: Vec<Vec<f64>> = points
        .iter()
        .zip(&flags)
        .filter(|(_, &keep)| keep)
        .map(|(x, _)| x.clone())
        .collect();
    let n_accepted = accepted.len() as u64;
    if accepted.is_empty() {
        return Err(CalibrateError::Calibration(
            "ABC accepted nothing under the fixed tolerance; raise tau or switch to a \
             quantile rule"
                .into(),
        ));
    }
    let mut set = ParticleSet::equal_weights(accepted, Vec::new(), "abc");
    set.meta = ParticleMeta {
        method: "abc".into(),
        schedule: cfg.rule.fixed_tau().into_iter().collect(),
        n_proposed: allowed as u64,
        n_accepted,
        n_evals: allowed as u64,
        ess: set.ess(),
        partial,
        flags: Vec::new(),
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ParamDim;

    fn unit_space() -> ParameterSpace {
        ParameterSpace::new(vec![ParamDim::uniform("x", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn accept_all_returns_prior_draws() {
        let space = unit_space();
        let set = abc_rejection(
            &|_, _| Ok(1.0),
            &space,
            &AbcConfig {
                n_sims: 500,
                rule: AcceptanceRule::Fixed { tau: f64::INFINITY },
                seed: 4,
                max_evals: None,
            },
        )
        .unwrap();
        assert_eq!(set.len(), 500);
        assert!((set.ess() - 500.0).abs() < 1e-9);
        let mean = set.weighted_mean()[0];
        assert!((mean - 0.5).abs() < 0.05, "prior mean {mean}");
    }

    #[test]
    fn quantile_rule_keeps_best_percent() {
        let space = unit_space();
        let set = abc_rejection(
            &|x, _| Ok(x[0]),
            &space,
            &AbcConfig {
                n_sims: 1000,
                rule: AcceptanceRule::Quantile { alpha: 0.01 },
                seed: 9,
                max_evals: None,
            },
        )
        .unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.points.iter().all(|p| p[0] < 0.05));
    }

    #[test]
    fn zero_acceptance_advises_larger_tau() {
        let space = unit_space();
        let err = abc_rejection(
            &|_, _| Ok(10.0),
            &space,
            &AbcConfig {
                n_sims: 200,
                rule: AcceptanceRule::Fixed { tau: 1.0 },
                seed: 0,
                max_evals: None,
            },
        );
        assert!(matches!(err, Err(CalibrateError::Calibration(msg)) if msg.contains("tau")));
    }

    #[test]
    fn quantile_needs_enough_sims() {
        let err = abc_rejection(
            &|_, _| Ok(0.0),
            &unit_space(),
            &AbcConfig {
                n_sims: 50,
                rule: AcceptanceRule::Quantile { alpha: 0.01 },
                seed: 0,
                max_evals: None,
            },
        );
        assert!(matches!(err, Err(CalibrateError::Config(_))));
    }

    #[test]
    fn budget_truncation_is_deterministic_and_flagged() {
        let space = unit_space();
        let run = || {
            abc_rejection(
                &|x, _| Ok(x[0]),
                &space,
                &AbcConfig {
                    n_sims: 1000,
                    rule: AcceptanceRule::Fixed { tau: 0.5 },
                    seed: 13,
                    max_evals: Some(300),
                },
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.meta.partial);
        assert_eq!(a.meta.n_evals, 300);
        assert_eq!(a.points, b.points);
    }
}
