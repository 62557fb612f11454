use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ObservationError;

/// Multivariate normal density with a cached Cholesky factor.
///
/// Factorize once per covariance and reuse across many residuals; samplers
/// calling a Gaussian likelihood in a loop should hold one of these.
#[derive(Debug, Clone)]
pub struct CholeskyMvn {
    chol: Cholesky<f64, Dyn>,
    log_det_half: f64,
    n: usize,
}

impl CholeskyMvn {
    pub fn new(cov: DMatrix<f64>) -> Result<Self, ObservationError> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(ObservationError::Config(format!(
                "covariance must be square, got {}x{}",
                n,
                cov.ncols()
            )));
        }
        let chol = Cholesky::new(cov).ok_or_else(|| {
            ObservationError::Numeric("covariance matrix is not positive definite".into())
        })?;
        let log_det_half = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        Ok(Self { chol, log_det_half, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Log density of the zero-mean normal at `resid`.
    pub fn log_pdf(&self, resid: &[f64]) -> f64 {
        let r = DVector::from_column_slice(resid);
        let solved = self.chol.solve(&r);
        -0.5 * r.dot(&solved)
            - self.log_det_half
            - 0.5 * self.n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// One zero-mean draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.n, |_, _| StandardNormal.sample(rng));
        (self.chol.l() * z).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance_matches_iid_normal() {
        let mvn = CholeskyMvn::new(DMatrix::identity(2, 2)).unwrap();
        let expected = -(2.0 * std::f64::consts::PI).ln() - 1.0;
        assert!((mvn.log_pdf(&[1.0, 1.0]) - expected).abs() < 1e-14);
    }

    #[test]
    fn non_pd_covariance_is_numeric_error() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CholeskyMvn::new(cov),
            Err(ObservationError::Numeric(_))
        ));
    }
}
