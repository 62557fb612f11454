use std::cell::Cell;

use super::{CalibrateError, Objective};
use crate::core::{build_design, split_seed, DesignMethod, ParameterSpace};
use crate::optim::{nelder_mead, NmOptions};

#[derive(Debug, Clone)]
pub struct MleConfig {
    /// Total objective evaluations allowed across all restarts.
    pub budget: u64,
    pub restarts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub x: Vec<f64>,
    pub score: f64,
    pub n_evals: u64,
    pub partial: bool,
}

/// Minimize a score over the parameter box by multi-start simplex search.
///
/// Start points come from a seeded latin-hypercube over the box; the budget
/// splits evenly across restarts and the total number of evaluations never
/// exceeds it. Ties between restarts break toward the earlier restart.
pub fn mle(
    score: Objective,
    space: &ParameterSpace,
    cfg: &MleConfig,
) -> Result<MleResult, CalibrateError> {
    let d = space.dim();
    if cfg.budget < 10 * d as u64 {
        return Err(CalibrateError::Config(format!(
            "budget {} below the minimum 10 * dim = {}",
            cfg.budget,
            10 * d
        )));
    }
    let restarts = cfg.restarts.max(1);
    let starts = build_design(space, restarts, DesignMethod::LatinHypercube, cfg.seed)?;
    let share = (cfg.budget / restarts as u64).max(1);

    let lower = space.lower();
    let upper = space.upper();
    let steps: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(lo, hi)| 0.1 * (hi - lo))
        .collect();

    let n_evals = Cell::new(0u64);
    let first_error: Cell<Option<CalibrateError>> = Cell::new(None);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut any_start_evaluated = false;

    for start in starts {
        let restart_evals = Cell::new(0u64);
        let objective = |x: &[f64]| -> f64 {
            if !space.contains(x) {
                return f64::INFINITY;
            }
            if n_evals.get() >= cfg.budget {
                return f64::INFINITY;
            }
            let eval_seed = split_seed(cfg.seed, n_evals.get());
            n_evals.set(n_evals.get() + 1);
            restart_evals.set(restart_evals.get() + 1);
            match score(x, eval_seed) {
                Ok(v) => v,
                Err(e) => {
                    if first_error.take().is_none() {
                        first_error.set(Some(e));
                    } else {
                        // keep the earliest
                        let prev = first_error.take();
                        first_error.set(prev);
                    }
                    f64::INFINITY
                }
            }
        };
        let result = nelder_mead(
            objective,
            &start,
            &steps,
            &NmOptions {
                max_evals: share as usize,
                ..Default::default()
            },
        );
        if restart_evals.get() > 0 {
            any_start_evaluated = true;
        }
        if result.f.is_finite() && best.as_ref().is_none_or(|(fb, _)| result.f < *fb) {
            best = Some((result.f, result.x));
        }
        if n_evals.get() >= cfg.budget {
            break;
        }
    }

    match best {
        Some((score, x)) => Ok(MleResult {
            x,
            score,
            n_evals: n_evals.get(),
            partial: false,
        }),
        None => {
            if !any_start_evaluated {
                return Err(CalibrateError::Calibration(
                    "no start point could be evaluated".into(),
                ));
            }
            Err(CalibrateError::Calibration(
                "every restart failed to produce a finite score".into(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ParamDim;

    fn unit_space() -> ParameterSpace {
        ParameterSpace::new(vec![ParamDim::uniform("x", -2.0, 2.0)]).unwrap()
    }

    #[test]
    fn quadratic_minimum_is_found() {
        let space = unit_space();
        let result = mle(
            &|x, _| Ok((x[0] - 0.7f64).powi(2)),
            &space,
            &MleConfig {
                budget: 400,
                restarts: 4,
                seed: 1,
            },
        )
        .unwrap();
        assert!((result.x[0] - 0.7).abs() < 1e-3, "x = {:?}", result.x);
        assert!(result.n_evals <= 400);
    }

    #[test]
    fn constant_score_returns_in_bounds_point() {
        let space = unit_space();
        let result = mle(
            &|_, _| Ok(4.25),
            &space,
            &MleConfig {
                budget: 100,
                restarts: 2,
                seed: 3,
            },
        )
        .unwrap();
        assert!(space.contains(&result.x));
        assert_eq!(result.score, 4.25);
    }

    #[test]
    fn budget_below_minimum_is_config_error() {
        let err = mle(
            &|_, _| Ok(0.0),
            &unit_space(),
            &MleConfig {
                budget: 5,
                restarts: 1,
                seed: 0,
            },
        );
        assert!(matches!(err, Err(CalibrateError::Config(_))));
    }

    #[test]
    fn all_failing_starts_is_calibration_error() {
        let err = mle(
            &|_, _| Err(CalibrateError::Calibration("boom".into())),
            &unit_space(),
            &MleConfig {
                budget: 100,
                restarts: 2,
                seed: 0,
            },
        );
        assert!(matches!(err, Err(CalibrateError::Calibration(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let space = unit_space();
        let run = |seed| {
            mle(
                &|x, _| Ok((x[0] + 0.3f64).powi(2) + 0.1 * (3.0 * x[0]).sin()),
                &space,
                &MleConfig {
                    budget: 300,
                    restarts: 3,
                    seed,
                },
            )
            .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a.x, b.x);
        assert_eq!(a.n_evals, b.n_evals);
    }
}
