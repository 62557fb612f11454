//! Score functions and threshold-based acceptance shared by point
//! estimation, ABC, and history matching. Lower scores mean better fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::BlackBoxSimulator;
use crate::observation::{
    log_likelihood, log_likelihood_stochastic, ObservationError, ObservationSet, SummaryStatistic,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("zero total variance at output {index}")]
    ZeroVariance { index: usize },
    #[error(transparent)]
    Observation(#[from] ObservationError),
}

/// Distance between summary vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistanceMetric {
    Euclidean,
    /// `sqrt(sum w_i (a_i - b_i)^2)`; weights are user-supplied, there is no
    /// principled default when summaries carry different units.
    ScaledEuclidean { weights: Vec<f64> },
}

impl DistanceMetric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64, ScoreError> {
        if a.len() != b.len() {
            return Err(ScoreError::Config(format!(
                "distance between vectors of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        match self {
            DistanceMetric::Euclidean => Ok(a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()),
            DistanceMetric::ScaledEuclidean { weights } => {
                if weights.len() != a.len() {
                    return Err(ScoreError::Config(format!(
                        "{} weights for length-{} summaries",
                        weights.len(),
                        a.len()
                    )));
                }
                Ok(a.iter()
                    .zip(b)
                    .zip(weights)
                    .map(|((x, y), w)| w * (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt())
            }
        }
    }
}

/// How multi-output implausibilities are combined into one statistic.
///
/// Max is the conservative standard; second-max guards against a single
/// misspecified output dominating the classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImplausibilityCombine {
    Max,
    SecondMax,
}

/// Per-output implausibility `|y_i - pred_i| / sqrt(var_obs + var_disc + var_code)`.
pub fn implausibility(
    y: &[f64],
    pred_mean: &[f64],
    var_obs: &[f64],
    var_disc: &[f64],
    var_code: &[f64],
) -> Result<Vec<f64>, ScoreError> {
    let n = y.len();
    if pred_mean.len() != n || var_obs.len() != n || var_disc.len() != n || var_code.len() != n {
        return Err(ScoreError::Config(
            "implausibility inputs must share one length".into(),
        ));
    }
    (0..n)
        .map(|i| {
            let total = var_obs[i] + var_disc[i] + var_code[i];
            if !(total > 0.0) {
                return Err(ScoreError::ZeroVariance { index: i });
            }
            Ok((y[i] - pred_mean[i]).abs() / total.sqrt())
        })
        .collect()
}

/// Combined implausibility statistic over outputs.
pub fn combined_implausibility(values: &[f64], combine: ImplausibilityCombine) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > max {
            second = max;
            max = v;
        } else if v > second {
            second = v;
        }
    }
    match combine {
        ImplausibilityCombine::Max => max,
        ImplausibilityCombine::SecondMax => {
            if values.len() > 1 {
                second
            } else {
                max
            }
        }
    }
}

/// Threshold rule `score < tau` deciding acceptability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provenance", rename_all = "kebab-case")]
pub enum AcceptanceRule {
    Fixed { tau: f64 },
    /// `tau = 3`, from the expected probability mass within three sigma.
    ThreeSigma,
    /// Accept the best `alpha` fraction of an ensemble of scores; ties at the
    /// cutoff are all accepted.
    Quantile { alpha: f64 },
}

impl AcceptanceRule {
    pub fn validate(&self) -> Result<(), ScoreError> {
        match self {
            // +inf is the accept-all sentinel; NaN and -inf are rejected
            AcceptanceRule::Fixed { tau } if tau.is_finite() || *tau == f64::INFINITY => Ok(()),
            AcceptanceRule::Fixed { tau } => Err(ScoreError::Config(format!(
                "tau must be finite or +inf, got {tau}"
            ))),
            AcceptanceRule::ThreeSigma => Ok(()),
            AcceptanceRule::Quantile { alpha } if *alpha > 0.0 && *alpha <= 1.0 => Ok(()),
            AcceptanceRule::Quantile { alpha } => Err(ScoreError::Config(format!(
                "quantile alpha must lie in (0, 1], got {alpha}"
            ))),
        }
    }

    pub fn fixed_tau(&self) -> Option<f64> {
        match self {
            AcceptanceRule::Fixed { tau } => Some(*tau),
            AcceptanceRule::ThreeSigma => Some(3.0),
            AcceptanceRule::Quantile { .. } => None,
        }
    }

    /// Accept a single score; quantile rules need the whole ensemble and are
    /// a configuration error here.
    pub fn accept(&self, score: f64) -> Result<bool, ScoreError> {
        match self.fixed_tau() {
            Some(tau) => Ok(score < tau),
            None => Err(ScoreError::Config(
                "quantile rule needs an ensemble of scores; use accept_set".into(),
            )),
        }
    }

    /// Acceptance flags for an ensemble of scores.
    pub fn accept_set(&self, scores: &[f64]) -> Result<Vec<bool>, ScoreError> {
        self.validate()?;
        match self {
            AcceptanceRule::Quantile { alpha } => {
                let n = scores.len();
                if n == 0 {
                    return Ok(Vec::new());
                }
                let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
                let mut sorted: Vec<f64> = scores.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable scores"));
                let cutoff = sorted[k - 1];
                Ok(scores.iter().map(|&s| s <= cutoff).collect())
            }
            _ => {
                let tau = self.fixed_tau().expect("fixed rule");
                Ok(scores.iter().map(|&s| s < tau).collect())
            }
        }
    }
}

/// Accept iff `score < tau` under the rule's threshold.
pub fn accept(rule: &AcceptanceRule, score: f64) -> Result<bool, ScoreError> {
    rule.accept(score)
}

/// Score kind `S(x, f, y)`.
#[derive(Debug, Clone)]
pub enum ScoreKind {
    /// `-log pi(y | x)`; stochastic simulators use a Monte Carlo estimate
    /// over `mc_samples` runs.
    NegLogLikelihood { mc_samples: usize },
    /// Max-combined implausibility with a fixed per-output discrepancy
    /// variance (code variance is zero when scoring the simulator itself).
    ImplausibilityMax { var_disc: Vec<f64> },
    /// Distance between summarized prediction and summarized data.
    SummaryDistance {
        summary: SummaryStatistic,
        metric: DistanceMetric,
    },
}

/// A score bound to an observation set and a simulator, evaluable at `x`.
#[derive(Clone)]
pub struct ScoreFunction {
    pub kind: ScoreKind,
    pub sim: BlackBoxSimulator,
    pub obs: ObservationSet,
    pub model_params: BTreeMap<String, f64>,
}

impl ScoreFunction {
    pub fn neg_log_likelihood(sim: BlackBoxSimulator, obs: ObservationSet) -> Self {
        Self {
            kind: ScoreKind::NegLogLikelihood { mc_samples: 20 },
            sim,
            obs,
            model_params: BTreeMap::new(),
        }
    }

    pub fn summary_distance(
        sim: BlackBoxSimulator,
        obs: ObservationSet,
        summary: SummaryStatistic,
        metric: DistanceMetric,
    ) -> Self {
        Self {
            kind: ScoreKind::SummaryDistance { summary, metric },
            sim,
            obs,
            model_params: BTreeMap::new(),
        }
    }

    /// Evaluate the score at `x`; `seed` drives any stochastic simulation.
    pub fn eval(&self, x: &[f64], seed: u64) -> Result<f64, ScoreError> {
        match &self.kind {
            ScoreKind::NegLogLikelihood { mc_samples } => Ok(neg_log_lik_score(
                x,
                self.sim.as_ref(),
                &self.obs,
                &self.model_params,
                *mc_samples,
                seed,
            )?),
            ScoreKind::ImplausibilityMax { var_disc } => {
                let pred = self.obs.predict(self.sim.as_ref(), x, seed)?;
                let var_obs = self
                    .obs
                    .model
                    .marginal_variances(self.obs.len(), &self.model_params)?;
                let zeros = vec![0.0; self.obs.len()];
                let per_output = implausibility(&self.obs.y, &pred, &var_obs, var_disc, &zeros)?;
                Ok(combined_implausibility(
                    &per_output,
                    ImplausibilityCombine::Max,
                ))
            }
            ScoreKind::SummaryDistance { summary, metric } => {
                let pred = self.obs.predict(self.sim.as_ref(), x, seed)?;
                let t_pred = summary.apply(&pred)?;
                let t_y = summary.apply(&self.obs.y)?;
                metric.distance(&t_pred, &t_y)
            }
        }
    }
}

/// Negative log-likelihood score at the operator-mapped simulator output.
pub fn neg_log_lik_score(
    x: &[f64],
    sim: &dyn crate::core::Simulator,
    obs: &ObservationSet,
    model_params: &BTreeMap<String, f64>,
    mc_samples: usize,
    seed: u64,
) -> Result<f64, ObservationError> {
    if sim.is_stochastic() {
        let est = log_likelihood_stochastic(sim, obs, x, mc_samples, seed, model_params)?;
        Ok(-est.value)
    } else {
        let pred = obs.predict(sim, x, seed)?;
        Ok(-log_likelihood(obs, &pred, model_params)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{ControlInput, FnSimulator};
    use crate::observation::{ObservationModel, ObservationOperator};
    use std::sync::Arc;

    fn iid_obs(y: Vec<f64>, sigma: f64) -> ObservationSet {
        let n = y.len();
        ObservationSet {
            y,
            operator: ObservationOperator::identity(n),
            model: ObservationModel::GaussianIid {
                sigma: Some(vec![sigma]),
            },
            control: ControlInput::empty(),
            locations: None,
        }
    }

    #[test]
    fn neg_log_lik_matches_manual_composition() {
        let sim: BlackBoxSimulator = Arc::new(FnSimulator::new(
            1,
            0,
            1,
            false,
            |x: &[f64], _: &[f64], _| vec![x[0]],
        ));
        let obs = iid_obs(vec![0.7], 1.0);
        let score = neg_log_lik_score(&[0.7], sim.as_ref(), &obs, &BTreeMap::new(), 1, 0).unwrap();
        assert!((score - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let score2 = neg_log_lik_score(&[1.7], sim.as_ref(), &obs, &BTreeMap::new(), 1, 0).unwrap();
        assert!((score2 - (0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5)).abs() < 1e-12);
        // strict composition check
        let pred = obs.predict(sim.as_ref(), &[1.7], 0).unwrap();
        let manual = -log_likelihood(&obs, &pred, &BTreeMap::new()).unwrap();
        assert!((score2 - manual).abs() < 1e-12);
    }

    #[test]
    fn implausibility_basics() {
        let zeros = [0.0];
        assert_eq!(
            implausibility(&[2.0], &[2.0], &[1.0], &zeros, &zeros).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            implausibility(&[3.0], &[0.0], &[1.0], &zeros, &zeros).unwrap(),
            vec![3.0]
        );
        assert_eq!(
            implausibility(&[4.0], &[0.0], &[1.0], &[1.0], &[2.0]).unwrap(),
            vec![2.0]
        );
    }

    #[test]
    fn zero_variance_names_the_output() {
        let err = implausibility(
            &[1.0, 2.0],
            &[1.0, 2.0],
            &[1.0, 0.0],
            &[0.0, 0.0],
            &[0.0, 0.0],
        );
        assert!(matches!(err, Err(ScoreError::ZeroVariance { index: 1 })));
    }

    #[test]
    fn combine_max_and_second_max() {
        let values = [0.5, 3.1, 2.0];
        assert_eq!(
            combined_implausibility(&values, ImplausibilityCombine::Max),
            3.1
        );
        assert_eq!(
            combined_implausibility(&values, ImplausibilityCombine::SecondMax),
            2.0
        );
        assert_eq!(
            combined_implausibility(&[1.5], ImplausibilityCombine::SecondMax),
            1.5
        );
    }

    #[test]
    fn acceptance_is_strict_at_tau() {
        let rule = AcceptanceRule::ThreeSigma;
        assert!(accept(&rule, 2.9).unwrap());
        assert!(!accept(&rule, 3.0).unwrap());
    }

    #[test]
    fn quantile_rule_accepts_best_fraction() {
        let scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let rule = AcceptanceRule::Quantile { alpha: 0.01 };
        let flags = rule.accept_set(&scores).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 10);
        assert!(flags[..10].iter().all(|&f| f));
    }

    #[test]
    fn quantile_rule_keeps_ties_at_cutoff() {
        let scores = vec![0.0, 1.0, 1.0, 1.0, 2.0];
        let rule = AcceptanceRule::Quantile { alpha: 0.4 };
        let flags = rule.accept_set(&scores).unwrap();
        // cutoff is the 2nd smallest (1.0); all ties at 1.0 accepted
        assert_eq!(flags, vec![true, true, true, true, false]);
    }

    #[test]
    fn summary_distance_score() {
        let sim: BlackBoxSimulator = Arc::new(FnSimulator::new(
            1,
            0,
            3,
            false,
            |x: &[f64], _: &[f64], _| vec![x[0], x[0] + 1.0, x[0] + 2.0],
        ));
        let mut obs = iid_obs(vec![1.0, 2.0, 3.0], 1.0);
        obs.operator = ObservationOperator::identity(3);
        let score = ScoreFunction::summary_distance(
            sim,
            obs,
            SummaryStatistic::Mean,
            DistanceMetric::Euclidean,
        );
        // mean of prediction at x=1 equals mean of y
        assert!(score.eval(&[1.0], 0).unwrap().abs() < 1e-12);
        assert!((score.eval(&[1.5], 0).unwrap() - 0.5).abs() < 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn implausibility_is_scale_equivariant(
                resid in -100.0f64..100.0,
                sd in 0.01f64..10.0,
                scale in 0.001f64..1000.0,
            ) {
                let base = implausibility(&[resid], &[0.0], &[sd * sd], &[0.0], &[0.0]).unwrap()[0];
                let scaled = implausibility(
                    &[resid * scale],
                    &[0.0],
                    &[sd * sd * scale * scale],
                    &[0.0],
                    &[0.0],
                )
                .unwrap()[0];
                prop_assert!((base - scaled).abs() < 1e-12 * base.max(1.0));
            }

            #[test]
            fn accept_is_monotone_in_score(
                tau in -10.0f64..10.0,
                s1 in -10.0f64..10.0,
                s2 in -10.0f64..10.0,
            ) {
                let rule = AcceptanceRule::Fixed { tau };
                let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
                if accept(&rule, hi).unwrap() {
                    prop_assert!(accept(&rule, lo).unwrap());
                }
            }
        }
    }
}
