use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, StudentsT};

use super::mvn::CholeskyMvn;
use super::ObservationError;

const LN_2PI: f64 = 1.8378770664093453;

/// Observation-error model linking the best simulator prediction to the data.
///
/// Scale parameters may be left unspecified (`sigma: None`), in which case
/// they become named free parameters ("sigma") that must be bound at
/// evaluation time; calibration treats them as additional inference targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationModel {
    /// `y_i = g_i(f(x*, u*))` exactly. Reasonable for discrete outputs,
    /// unlikely to be true for any continuous quantity.
    PerfectMatch,
    /// Independent `N(0, sigma_i^2)` errors. A one-element `sigma` broadcasts.
    GaussianIid { sigma: Option<Vec<f64>> },
    /// Correlated Gaussian errors with full covariance.
    GaussianCorrelated { cov: Vec<Vec<f64>> },
    /// Independent scaled Student-t errors with `dof > 2`.
    StudentT { sigma: Option<Vec<f64>>, dof: f64 },
}

impl ObservationModel {
    /// Names of parameters that must be bound via `model_params`.
    pub fn free_params(&self) -> Vec<String> {
        match self {
            ObservationModel::GaussianIid { sigma: None }
            | ObservationModel::StudentT { sigma: None, .. } => vec!["sigma".into()],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ObservationError> {
        match self {
            ObservationModel::PerfectMatch => {
                log::warn!(
                    "perfect-match observation model: exact equality is unlikely to hold \
                     for continuous outputs"
                );
                Ok(())
            }
            ObservationModel::GaussianIid { sigma } => check_sigma(sigma.as_deref(), n),
            ObservationModel::GaussianCorrelated { cov } => {
                if cov.len() != n || cov.iter().any(|row| row.len() != n) {
                    return Err(ObservationError::Config(format!(
                        "covariance must be {n}x{n}"
                    )));
                }
                let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
                if (&m - m.transpose()).amax() > 1e-10 {
                    return Err(ObservationError::Config(
                        "covariance must be symmetric".into(),
                    ));
                }
                CholeskyMvn::new(m).map(|_| ())
            }
            ObservationModel::StudentT { sigma, dof } => {
                if !(*dof > 2.0) {
                    return Err(ObservationError::Config(format!(
                        "student-t dof must exceed 2, got {dof}"
                    )));
                }
                check_sigma(sigma.as_deref(), n)
            }
        }
    }

    /// Per-output standard deviations for the independent models.
    pub(crate) fn resolve_sigmas(
        &self,
        n: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>, ObservationError> {
        let stored = match self {
            ObservationModel::GaussianIid { sigma } => sigma,
            ObservationModel::StudentT { sigma, .. } => sigma,
            _ => {
                return Err(ObservationError::Config(
                    "model has no per-output sigma".into(),
                ))
            }
        };
        let sigmas = match stored {
            Some(v) if v.len() == 1 => vec![v[0]; n],
            Some(v) if v.len() == n => v.clone(),
            Some(v) => {
                return Err(ObservationError::Config(format!(
                    "sigma length {} vs {n} outputs",
                    v.len()
                )))
            }
            None => {
                let s = params.get("sigma").copied().ok_or_else(|| {
                    ObservationError::Config("free parameter 'sigma' is unbound".into())
                })?;
                vec![s; n]
            }
        };
        if sigmas.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(ObservationError::Config(
                "sigma values must be positive and finite".into(),
            ));
        }
        Ok(sigmas)
    }

    /// Log density of `y` under the error model centered at `pred`.
    pub fn log_likelihood(
        &self,
        y: &[f64],
        pred: &[f64],
        params: &BTreeMap<String, f64>,
    ) -> Result<f64, ObservationError> {
        if y.len() != pred.len() {
            return Err(ObservationError::Config(format!(
                "{} observations vs {} predictions",
                y.len(),
                pred.len()
            )));
        }
        match self {
            ObservationModel::PerfectMatch => {
                Ok(if y == pred { 0.0 } else { f64::NEG_INFINITY })
            }
            ObservationModel::GaussianIid { .. } => {
                let sigmas = self.resolve_sigmas(y.len(), params)?;
                Ok(y.iter()
                    .zip(pred)
                    .zip(&sigmas)
                    .map(|((yi, pi), s)| {
                        let z = (yi - pi) / s;
                        -0.5 * z * z - s.ln() - 0.5 * LN_2PI
                    })
                    .sum())
            }
            ObservationModel::GaussianCorrelated { cov } => {
                let n = y.len();
                let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
                let mvn = CholeskyMvn::new(m)?;
                let resid: Vec<f64> = y.iter().zip(pred).map(|(a, b)| a - b).collect();
                Ok(mvn.log_pdf(&resid))
            }
            ObservationModel::StudentT { dof, .. } => {
                let sigmas = self.resolve_sigmas(y.len(), params)?;
                let mut total = 0.0;
                for ((yi, pi), s) in y.iter().zip(pred).zip(&sigmas) {
                    let dist = StudentsT::new(*pi, *s, *dof).map_err(|e| {
                        ObservationError::Config(format!("student-t: {e}"))
                    })?;
                    total += dist.ln_pdf(*yi);
                }
                Ok(total)
            }
        }
    }

    /// Marginal error variance per output, as enters the implausibility
    /// denominator.
    pub fn marginal_variances(
        &self,
        n: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>, ObservationError> {
        match self {
            ObservationModel::PerfectMatch => Ok(vec![0.0; n]),
            ObservationModel::GaussianIid { .. } => {
                Ok(self.resolve_sigmas(n, params)?.iter().map(|s| s * s).collect())
            }
            ObservationModel::GaussianCorrelated { cov } => {
                Ok((0..n).map(|i| cov[i][i]).collect())
            }
            ObservationModel::StudentT { dof, .. } => Ok(self
                .resolve_sigmas(n, params)?
                .iter()
                .map(|s| s * s * dof / (dof - 2.0))
                .collect()),
        }
    }

    /// Full error covariance for the Gaussian models.
    pub fn noise_cov(
        &self,
        n: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<DMatrix<f64>, ObservationError> {
        match self {
            ObservationModel::GaussianIid { .. } => {
                let sigmas = self.resolve_sigmas(n, params)?;
                Ok(DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        sigmas[i] * sigmas[i]
                    } else {
                        0.0
                    }
                }))
            }
            ObservationModel::GaussianCorrelated { cov } => {
                Ok(DMatrix::from_fn(n, n, |i, j| cov[i][j]))
            }
            _ => Err(ObservationError::Config(
                "a Gaussian observation model is required here".into(),
            )),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(
            self,
            ObservationModel::GaussianIid { .. } | ObservationModel::GaussianCorrelated { .. }
        )
    }

    /// Draw one error vector.
    pub fn sample_noise<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>, ObservationError> {
        match self {
            ObservationModel::PerfectMatch => Ok(vec![0.0; n]),
            ObservationModel::GaussianIid { .. } => {
                let sigmas = self.resolve_sigmas(n, params)?;
                Ok(sigmas
                    .iter()
                    .map(|s| {
                        let z: f64 = StandardNormal.sample(rng);
                        s * z
                    })
                    .collect())
            }
            ObservationModel::GaussianCorrelated { .. } => {
                let mvn = CholeskyMvn::new(self.noise_cov(n, params)?)?;
                Ok(mvn.sample(rng))
            }
            ObservationModel::StudentT { dof, .. } => {
                let sigmas = self.resolve_sigmas(n, params)?;
                let t = StudentT::new(*dof)
                    .map_err(|e| ObservationError::Config(format!("student-t: {e}")))?;
                Ok(sigmas.iter().map(|s| s * t.sample(rng)).collect())
            }
        }
    }
}

fn check_sigma(sigma: Option<&[f64]>, n: usize) -> Result<(), ObservationError> {
    match sigma {
        None => Ok(()),
        Some(v) => {
            if v.len() != 1 && v.len() != n {
                return Err(ObservationError::Config(format!(
                    "sigma length {} vs {n} outputs",
                    v.len()
                )));
            }
            if v.iter().any(|&s| !(s > 0.0)) {
                return Err(ObservationError::Config(
                    "sigma values must be positive".into(),
                ));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn standard_normal_at_zero() {
        let model = ObservationModel::GaussianIid {
            sigma: Some(vec![1.0]),
        };
        let ll = model.log_likelihood(&[0.3], &[0.3], &no_params()).unwrap();
        assert!((ll - (-0.9189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn standard_normal_at_one() {
        let model = ObservationModel::GaussianIid {
            sigma: Some(vec![1.0]),
        };
        let ll = model.log_likelihood(&[1.0], &[0.0], &no_params()).unwrap();
        assert!((ll - (-0.9189385332046727 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn correlated_identity_matches_direct_mvn_density() {
        let model = ObservationModel::GaussianCorrelated {
            cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let ll = model
            .log_likelihood(&[1.0, 1.0], &[0.0, 0.0], &no_params())
            .unwrap();
        assert!((ll - (-(2.0 * std::f64::consts::PI).ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_match_is_zero_or_neg_inf() {
        let model = ObservationModel::PerfectMatch;
        assert_eq!(
            model.log_likelihood(&[2.0], &[2.0], &no_params()).unwrap(),
            0.0
        );
        assert_eq!(
            model.log_likelihood(&[2.0], &[2.1], &no_params()).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn unbound_free_sigma_is_config_error() {
        let model = ObservationModel::GaussianIid { sigma: None };
        assert_eq!(model.free_params(), vec!["sigma".to_string()]);
        assert!(matches!(
            model.log_likelihood(&[0.0], &[0.0], &no_params()),
            Err(ObservationError::Config(_))
        ));
        let mut params = no_params();
        params.insert("sigma".into(), 2.0);
        let ll = model.log_likelihood(&[0.0], &[0.0], &params).unwrap();
        assert!((ll - (-0.9189385332046727 - 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn non_pd_covariance_is_numeric_error() {
        let model = ObservationModel::GaussianCorrelated {
            cov: vec![vec![1.0, 3.0], vec![3.0, 1.0]],
        };
        assert!(matches!(
            model.log_likelihood(&[0.0, 0.0], &[0.0, 0.0], &no_params()),
            Err(ObservationError::Numeric(_))
        ));
    }

    #[test]
    fn gaussian_loglik_is_maximized_at_the_data() {
        let model = ObservationModel::GaussianIid {
            sigma: Some(vec![0.7, 1.3, 2.0]),
        };
        let y = [0.4, -1.2, 3.3];
        let at_y = model.log_likelihood(&y, &y, &no_params()).unwrap();
        let mut rng = crate::core::rng_from(5, 0);
        for _ in 0..200 {
            let pred: Vec<f64> = y
                .iter()
                .map(|v| v + 4.0 * (rng.random::<f64>() - 0.5))
                .collect();
            let ll = model.log_likelihood(&y, &pred, &no_params()).unwrap();
            assert!(ll <= at_y);
        }
    }

    #[test]
    fn diagonal_correlated_equals_iid() {
        let sigmas = [0.5, 1.5, 2.5];
        let iid = ObservationModel::GaussianIid {
            sigma: Some(sigmas.to_vec()),
        };
        let cov: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| if i == j { sigmas[i] * sigmas[i] } else { 0.0 })
                    .collect()
            })
            .collect();
        let corr = ObservationModel::GaussianCorrelated { cov };
        let y = [1.0, -0.5, 2.0];
        let pred = [0.3, 0.1, 1.5];
        let a = iid.log_likelihood(&y, &pred, &no_params()).unwrap();
        let b = corr.log_likelihood(&y, &pred, &no_params()).unwrap();
        assert!((a - b).abs() < 1e-12, "iid {a} vs correlated {b}");
    }

    #[test]
    fn student_t_needs_dof_above_two() {
        let model = ObservationModel::StudentT {
            sigma: Some(vec![1.0]),
            dof: 2.0,
        };
        assert!(model.validate(1).is_err());
        let ok = ObservationModel::StudentT {
            sigma: Some(vec![1.0]),
            dof: 5.0,
        };
        assert!(ok.validate(1).is_ok());
        // heavier tails than the Gaussian at 4 sigma
        let g = ObservationModel::GaussianIid {
            sigma: Some(vec![1.0]),
        };
        let lt = ok.log_likelihood(&[4.0], &[0.0], &no_params()).unwrap();
        let lg = g.log_likelihood(&[4.0], &[0.0], &no_params()).unwrap();
        assert!(lt > lg);
    }
}
