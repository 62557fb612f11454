use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CalibrateError;
use crate::core::{build_design, split_seed, BlackBoxSimulator, DesignMethod, ParameterSpace};
use crate::gp::{FitOptions, MeanKind, MultiOutputGp, NoiseSpec};
use crate::observation::ObservationSet;
use crate::scores::{combined_implausibility, implausibility, ImplausibilityCombine};

/// What produces predictions (and code uncertainty) for candidate points.
pub enum HmPredictor {
    /// The simulator itself; code variance is zero.
    Simulator(BlackBoxSimulator),
    /// A per-output GP emulator; its predictive variance enters the
    /// implausibility as code variance. `refit_sim` is required for
    /// multi-wave refocusing, which reruns the simulator inside the current
    /// NROY set and refits.
    Surrogate {
        emulator: MultiOutputGp,
        refit_sim: Option<BlackBoxSimulator>,
    },
}

/// Candidate points to classify: explicit, or a latin-hypercube size.
pub enum HmCandidates {
    Points(Vec<Vec<f64>>),
    Count(usize),
}

impl HmCandidates {
    /// Default candidate count for a `d`-dimensional space.
    pub fn default_count(d: usize) -> Self {
        HmCandidates::Count(200 * d)
    }
}

#[derive(Debug, Clone)]
pub struct HmConfig {
    /// Implausibility threshold; three-sigma by default.
    pub tau: f64,
    pub waves: usize,
    pub combine: ImplausibilityCombine,
    pub seed: u64,
    pub max_evals: Option<u64>,
    pub refit_restarts: usize,
}

impl Default for HmConfig {
    fn default() -> Self {
        Self {
            tau: 3.0,
            waves: 1,
            combine: ImplausibilityCombine::Max,
            seed: 0,
            max_evals: None,
            refit_restarts: 2,
        }
    }
}

/// Classification of the candidate set in one wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NroyReport {
    pub wave: usize,
    pub candidates: Vec<Vec<f64>>,
    pub implausibility: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Accepted / total candidates.
    pub retained_fraction: f64,
    pub warnings: Vec<String>,
    /// Cumulative simulator evaluations spent up to this wave.
    pub n_sim_evals: u64,
}

/// History matching: classify candidates as implausible or not-ruled-out-yet
/// by thresholding the combined implausibility at `tau`.
///
/// With a surrogate predictor, each subsequent wave runs the simulator at the
/// retained candidates, refits the emulator on the enlarged training set, and
/// rescores; the shrinking code variance refocuses the classification. An
/// empty NROY set is a legitimate outcome (the simulator may be incapable of
/// matching the data) and stops further waves with a warning.
pub fn history_match(
    mut predictor: HmPredictor,
    obs: &ObservationSet,
    var_disc: &[f64],
    candidates: HmCandidates,
    space: &ParameterSpace,
    cfg: &HmConfig,
) -> Result<Vec<NroyReport>, CalibrateError> {
    let n_obs = obs.len();
    if var_disc.len() != n_obs {
        return Err(CalibrateError::Config(format!(
            "var_disc has {} entries for {n_obs} observations",
            var_disc.len()
        )));
    }
    let var_obs = obs.model.marginal_variances(n_obs, &Default::default())?;
    let candidates = match candidates {
        HmCandidates::Points(p) => {
            if p.is_empty() {
                return Err(CalibrateError::Config("no candidate points".into()));
            }
            p
        }
        HmCandidates::Count(n) => {
            build_design(space, n, DesignMethod::LatinHypercube, split_seed(cfg.seed, 1))?
        }
    };
    if matches!(
        predictor,
        HmPredictor::Surrogate {
            refit_sim: None,
            ..
        }
    ) && cfg.waves > 1
    {
        return Err(CalibrateError::Config(
            "multi-wave refocusing needs the simulator alongside the surrogate".into(),
        ));
    }

    let budget = cfg.max_evals.unwrap_or(u64::MAX);
    let mut n_sim_evals = 0u64;
    let mut reports = Vec::with_capacity(cfg.waves);
    // deterministic simulators keep one prediction set across waves
    let mut cached_sim_preds: Option<Vec<Vec<f64>>> = None;

    for wave in 1..=cfg.waves {
        let zeros = vec![0.0; n_obs];
        let scored: Vec<Result<(Vec<f64>, Vec<f64>), CalibrateError>> = match &predictor {
            HmPredictor::Simulator(sim) => {
                if let Some(preds) = &cached_sim_preds {
                    preds
                        .iter()
                        .map(|p| Ok((p.clone(), zeros.clone())))
                        .collect()
                } else {
                    let wave_seed = split_seed(cfg.seed, 100 + wave as u64);
                    let fresh: Vec<Result<(Vec<f64>, Vec<f64>), CalibrateError>> = candidates
                        .par_iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let pred =
                                obs.predict(sim.as_ref(), x, split_seed(wave_seed, i as u64))?;
                            Ok((pred, zeros.clone()))
                        })
                        .collect();
                    n_sim_evals += candidates.len() as u64;
                    if !sim.is_stochastic() {
                        let mut cache = Vec::with_capacity(candidates.len());
                        for r in &fresh {
                            match r {
                                Ok((p, _)) => cache.push(p.clone()),
                                Err(_) => break,
                            }
                        }
                        if cache.len() == candidates.len() {
                            cached_sim_preds = Some(cache);
                        }
                    }
                    fresh
                }
            }
            HmPredictor::Surrogate { emulator, .. } => candidates
                .par_iter()
                .map(|x| Ok(emulator.predict(x)))
                .collect(),
        };

        let mut implaus = Vec::with_capacity(candidates.len());
        for r in scored {
            let (pred, var_code) = r?;
            let per_output = implausibility(&obs.y, &pred, &var_obs, var_disc, &var_code)?;
            implaus.push(combined_implausibility(&per_output, cfg.combine));
        }
        let accepted: Vec<bool> = implaus.iter().map(|&i| i < cfg.tau).collect();
        let n_accepted = accepted.iter().filter(|&&a| a).count();
        let mut warnings = Vec::new();
        if n_accepted == 0 {
            warnings.push(
                "empty NROY set: no candidate is plausible at this threshold; the \
                 simulator may be incapable of matching the data"
                    .to_string(),
            );
        }
        reports.push(NroyReport {
            wave,
            candidates: candidates.clone(),
            implausibility: implaus,
            accepted: accepted.clone(),
            retained_fraction: n_accepted as f64 / candidates.len() as f64,
            warnings,
            n_sim_evals,
        });
        if n_accepted == 0 {
            break;
        }

        // refocus: rerun the simulator inside the current NROY set and refit
        if wave < cfg.waves {
            if let HmPredictor::Surrogate {
                emulator,
                refit_sim: Some(sim),
            } = &mut predictor
            {
                let mut x_train = emulator.models[0].x_train_raw();
                let mut y_train: Vec<Vec<f64>> = {
                    let cols: Vec<Vec<f64>> =
                        emulator.models.iter().map(|m| m.y_train_raw()).collect();
                    (0..x_train.len())
                        .map(|i| cols.iter().map(|c| c[i]).collect())
                        .collect()
                };
                let known: std::collections::HashSet<Vec<u64>> = x_train
                    .iter()
                    .map(|x| x.iter().map(|v| v.to_bits()).collect())
                    .collect();
                let mut new_points: Vec<Vec<f64>> = candidates
                    .iter()
                    .zip(&accepted)
                    .filter(|(x, &a)| {
                        a && !known.contains(
                            &x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>(),
                        )
                    })
                    .map(|(x, _)| x.clone())
                    .collect();
                let allowed = budget.saturating_sub(n_sim_evals) as usize;
                if new_points.len() > allowed {
                    new_points.truncate(allowed);
                }
                if new_points.is_empty() {
                    break;
                }
                let run_seed = split_seed(cfg.seed, 500 + wave as u64);
                let outputs: Vec<Result<Vec<f64>, CalibrateError>> = new_points
                    .par_iter()
                    .enumerate()
                    .map(|(i, x)| Ok(obs.predict(sim.as_ref(), x, split_seed(run_seed, i as u64))?))
                    .collect();
                n_sim_evals += new_points.len() as u64;
                for (x, out) in new_points.into_iter().zip(outputs) {
                    x_train.push(x);
                    y_train.push(out?);
                }
                *emulator = MultiOutputGp::fit(
                    &x_train,
                    &y_train,
                    emulator.models[0].kernel().kind,
                    MeanKind::Constant,
                    NoiseSpec::Fixed(0.0),
                    &FitOptions {
                        restarts: cfg.refit_restarts,
                        seed: split_seed(cfg.seed, 900 + wave as u64),
                        ..Default::default()
                    },
                )?;
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ParamDim;
    use crate::testbed::make_linear_gaussian;

    #[test]
    fn exact_match_is_retained_every_wave() {
        let problem = make_linear_gaussian();
        let x_star = 0.4;
        let obs = problem.observation(vec![x_star]);
        let candidates: Vec<Vec<f64>> = (0..81).map(|i| vec![-4.0 + 0.1 * i as f64]).collect();
        let reports = history_match(
            HmPredictor::Simulator(problem.simulator.clone()),
            &obs,
            &[0.0],
            HmCandidates::Points(candidates.clone()),
            &problem.space,
            &HmConfig {
                waves: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(reports.len(), 3);
        let idx = candidates
            .iter()
            .position(|c| (c[0] - x_star).abs() < 1e-9)
            .unwrap();
        for report in &reports {
            assert!(report.accepted[idx], "x* dropped in wave {}", report.wave);
        }
    }

    #[test]
    fn four_sigma_residual_is_rejected() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![0.0]);
        // candidate 4 sigma away (sigma_total = 1)
        let reports = history_match(
            HmPredictor::Simulator(problem.simulator.clone()),
            &obs,
            &[0.0],
            HmCandidates::Points(vec![vec![4.0], vec![0.5]]),
            &problem.space,
            &HmConfig::default(),
        )
        .unwrap();
        assert!(!reports[0].accepted[0]);
        assert!(reports[0].accepted[1]);
        assert!((reports[0].implausibility[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nroy_interval_matches_analytic_bounds() {
        let problem = make_linear_gaussian();
        let y = 0.8;
        let obs = problem.observation(vec![y]);
        let cell = 0.01;
        let candidates: Vec<Vec<f64>> = (0..=1000)
            .map(|i| vec![-5.0 + cell * i as f64])
            .collect();
        let reports = history_match(
            HmPredictor::Simulator(problem.simulator.clone()),
            &obs,
            &[0.0],
            HmCandidates::Points(candidates.clone()),
            &problem.space,
            &HmConfig::default(),
        )
        .unwrap();
        let retained: Vec<f64> = candidates
            .iter()
            .zip(&reports[0].accepted)
            .filter(|(_, &a)| a)
            .map(|(c, _)| c[0])
            .collect();
        let lo = retained.first().copied().unwrap();
        let hi = retained.last().copied().unwrap();
        assert!((lo - (y - 3.0)).abs() <= cell + 1e-12, "lower end {lo}");
        assert!((hi - (y + 3.0)).abs() <= cell + 1e-12, "upper end {hi}");
    }

    #[test]
    fn empty_nroy_is_reported_not_an_error() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![100.0]);
        let reports = history_match(
            HmPredictor::Simulator(problem.simulator.clone()),
            &obs,
            &[0.0],
            HmCandidates::Points(vec![vec![0.0], vec![1.0]]),
            &problem.space,
            &HmConfig {
                waves: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].retained_fraction, 0.0);
        assert!(!reports[0].warnings.is_empty());
    }

    #[test]
    fn decreasing_tau_never_enlarges_nroy() {
        let problem = make_linear_gaussian();
        let obs = problem.observation(vec![0.4]);
        let candidates: Vec<Vec<f64>> = (0..200).map(|i| vec![-5.0 + 0.05 * i as f64]).collect();
        let space = ParameterSpace::new(vec![ParamDim::uniform("x", -5.0, 5.0)]).unwrap();
        let run = |tau: f64| {
            history_match(
                HmPredictor::Simulator(problem.simulator.clone()),
                &obs,
                &[0.0],
                HmCandidates::Points(candidates.clone()),
                &space,
                &HmConfig {
                    tau,
                    ..Default::default()
                },
            )
            .unwrap()[0]
                .accepted
                .clone()
        };
        let wide = run(3.0);
        let narrow = run(2.0);
        for (w, n) in wide.iter().zip(&narrow) {
            if *n {
                assert!(*w, "point accepted at tau 2 but not tau 3");
            }
        }
    }
}
