use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kernel::{Kernel, MAX_JITTER};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("{0}")]
    Invalid(String),
    #[error("covariance conditioning failure after jitter escalation to {jitter:.1e}")]
    Conditioning { jitter: f64 },
    #[error("need at least {need} training points, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

/// Prior mean function of the process, with fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanFn {
    Zero,
    Constant { value: f64 },
    Linear { intercept: f64, coeffs: Vec<f64> },
}

impl MeanFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanFn::Zero => 0.0,
            MeanFn::Constant { value } => *value,
            MeanFn::Linear { intercept, coeffs } => {
                intercept + coeffs.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>()
            }
        }
    }

    /// Regression basis for generalized-least-squares coefficient estimation.
    pub(crate) fn basis(kind: BasisKind, x: &[f64]) -> Vec<f64> {
        match kind {
            BasisKind::Zero => Vec::new(),
            BasisKind::Constant => vec![1.0],
            BasisKind::Linear => {
                let mut b = Vec::with_capacity(1 + x.len());
                b.push(1.0);
                b.extend_from_slice(x);
                b
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BasisKind {
    Zero,
    Constant,
    Linear,
}

/// Affine input/output standardization recorded by `gp_fit`.
///
/// Inputs map to the unit box spanned by the training data, outputs to zero
/// mean and unit variance. Models built directly from data use the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub x_lo: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl Transform {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            x_lo: vec![0.0; input_dim],
            x_scale: vec![1.0; input_dim],
            y_mean: 0.0,
            y_scale: 1.0,
        }
    }

    pub fn from_data(x: &[Vec<f64>], y: &[f64]) -> Self {
        let d = x[0].len();
        let mut x_lo = vec![f64::INFINITY; d];
        let mut x_hi = vec![f64::NEG_INFINITY; d];
        for row in x {
            for j in 0..d {
                x_lo[j] = x_lo[j].min(row[j]);
                x_hi[j] = x_hi[j].max(row[j]);
            }
        }
        let x_scale: Vec<f64> = x_lo
            .iter()
            .zip(&x_hi)
            .map(|(&lo, &hi)| if hi - lo > 1e-12 { hi - lo } else { 1.0 })
            .collect();
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };
        Self {
            x_lo,
            x_scale,
            y_mean,
            y_scale,
        }
    }

    pub fn x_std(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_lo)
            .zip(&self.x_scale)
            .map(|((&xi, &lo), &sc)| (xi - lo) / sc)
            .collect()
    }

    pub fn x_raw(&self, x_std: &[f64]) -> Vec<f64> {
        x_std
            .iter()
            .zip(&self.x_lo)
            .zip(&self.x_scale)
            .map(|((&xi, &lo), &sc)| lo + sc * xi)
            .collect()
    }

    pub fn y_std(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn y_raw(&self, y_std: f64) -> f64 {
        self.y_mean + self.y_scale * y_std
    }
}

/// Leave-one-out prediction for one training point.
#[derive(Debug, Clone, PartialEq)]
pub struct LooPoint {
    pub mean: f64,
    pub variance: f64,
    pub std_residual: f64,
}

/// Gaussian-process regression model, immutable after construction.
///
/// Internally the kernel and mean live on the standardized scale recorded in
/// `transform`; predictions are returned on the raw scale. The Cholesky factor
/// of the training covariance is cached at construction and recomputed on
/// deserialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpModelData", into = "GpModelData")]
pub struct GpModel {
    kernel: Kernel,
    mean: MeanFn,
    noise_variance: f64,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    transform: Transform,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter_used: f64,
    lml: f64,
}

#[derive(Serialize, Deserialize)]
struct GpModelData {
    kernel: Kernel,
    mean: MeanFn,
    noise_variance: f64,
    x_train: Vec<Vec<f64>>,
    y_train: Vec<f64>,
    transform: Transform,
}

impl From<GpModel> for GpModelData {
    fn from(m: GpModel) -> Self {
        GpModelData {
            kernel: m.kernel,
            mean: m.mean,
            noise_variance: m.noise_variance,
            x_train: m.x_train,
            y_train: m.y_train,
            transform: m.transform,
        }
    }
}

impl TryFrom<GpModelData> for GpModel {
    type Error = GpError;

    fn try_from(d: GpModelData) -> Result<Self, GpError> {
        GpModel::with_standardized(
            d.kernel,
            d.mean,
            d.noise_variance,
            d.x_train,
            d.y_train,
            d.transform,
        )
    }
}

/// Cholesky of the training covariance, escalating jitter tenfold on failure.
fn factorize(
    kernel: &Kernel,
    noise: f64,
    x: &[Vec<f64>],
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = kernel.jitter;
    loop {
        let k = kernel.clone().with_jitter(jitter).gram(x, noise);
        if let Some(chol) = Cholesky::new(k) {
            return Ok((chol, jitter));
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER {
            return Err(GpError::Conditioning { jitter });
        }
    }
}

impl GpModel {
    /// Condition a GP with given hyperparameters on raw-scale data.
    pub fn with_data(
        kernel: Kernel,
        mean: MeanFn,
        noise_variance: f64,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
    ) -> Result<Self, GpError> {
        let d = kernel.input_dim();
        Self::with_standardized(kernel, mean, noise_variance, x, y, Transform::identity(d))
    }

    pub(crate) fn with_standardized(
        kernel: Kernel,
        mean: MeanFn,
        noise_variance: f64,
        x_train: Vec<Vec<f64>>,
        y_train: Vec<f64>,
        transform: Transform,
    ) -> Result<Self, GpError> {
        if x_train.len() != y_train.len() {
            return Err(GpError::Invalid(format!(
                "{} inputs vs {} outputs",
                x_train.len(),
                y_train.len()
            )));
        }
        if !(kernel.signal_variance > 0.0) || kernel.lengthscales.iter().any(|&l| !(l > 0.0)) {
            return Err(GpError::Invalid(
                "signal variance and lengthscales must be positive".into(),
            ));
        }
        if noise_variance < 0.0 {
            return Err(GpError::Invalid("noise variance must be >= 0".into()));
        }
        if x_train.is_empty() {
            return Ok(Self {
                kernel,
                mean,
                noise_variance,
                x_train,
                y_train,
                transform,
                chol: None,
                alpha: DVector::zeros(0),
                jitter_used: 0.0,
                lml: 0.0,
            });
        }
        let (chol, jitter_used) = factorize(&kernel, noise_variance, &x_train)?;
        let resid = DVector::from_iterator(
            y_train.len(),
            y_train
                .iter()
                .zip(&x_train)
                .map(|(&yi, xi)| yi - mean.eval(xi)),
        );
        let alpha = chol.solve(&resid);
        let n = y_train.len() as f64;
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let lml = -0.5 * resid.dot(&alpha)
            - log_det_half
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            kernel,
            mean,
            noise_variance,
            x_train,
            y_train,
            transform,
            chol: Some(chol),
            alpha,
            jitter_used,
            lml,
        })
    }

    /// GP prior with no training data, e.g. a discrepancy model before any
    /// conditioning. Predictions return the prior mean and variance.
    pub fn prior(kernel: Kernel, mean: MeanFn) -> Self {
        let d = kernel.input_dim();
        Self {
            kernel,
            mean,
            noise_variance: 0.0,
            x_train: Vec::new(),
            y_train: Vec::new(),
            transform: Transform::identity(d),
            chol: None,
            alpha: DVector::zeros(0),
            jitter_used: 0.0,
            lml: 0.0,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn mean_fn(&self) -> &MeanFn {
        &self.mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn n_train(&self) -> usize {
        self.x_train.len()
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    /// Training inputs on the raw scale.
    pub fn x_train_raw(&self) -> Vec<Vec<f64>> {
        self.x_train.iter().map(|x| self.transform.x_raw(x)).collect()
    }

    /// Training outputs on the raw scale.
    pub fn y_train_raw(&self) -> Vec<f64> {
        self.y_train.iter().map(|&y| self.transform.y_raw(y)).collect()
    }

    /// Log marginal likelihood of the (standardized) training data.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Predictive mean and variance of the latent process at one point.
    ///
    /// The variance is the code uncertainty about `f(x)`; it excludes the
    /// observation noise and is clamped at zero (a warning is logged if the
    /// raw value falls below -1e-10).
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let xs = self.transform.x_std(x);
        let prior_var = self.kernel.signal_variance * self.transform.y_scale.powi(2);
        let prior_mean = self.transform.y_raw(self.mean.eval(&xs));
        let Some(chol) = &self.chol else {
            return (prior_mean, prior_var);
        };
        let ks = DVector::from_iterator(
            self.x_train.len(),
            self.x_train.iter().map(|xt| self.kernel.value(&xs, xt)),
        );
        let mean_std = self.mean.eval(&xs) + ks.dot(&self.alpha);
        let v = chol.solve(&ks);
        let mut var_std = self.kernel.signal_variance - ks.dot(&v);
        if var_std < -1e-10 {
            log::warn!("negative predictive variance {var_std:.3e} clamped to 0");
        }
        if var_std < 0.0 {
            var_std = 0.0;
        }
        (
            self.transform.y_raw(mean_std),
            var_std * self.transform.y_scale.powi(2),
        )
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Prior mean vector and covariance matrix at `points` (raw scale), as
    /// used when the process enters an observation model unconditioned.
    pub fn prior_mean_cov(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let std_pts: Vec<Vec<f64>> = points.iter().map(|p| self.transform.x_std(p)).collect();
        let mean = DVector::from_iterator(
            std_pts.len(),
            std_pts
                .iter()
                .map(|p| self.transform.y_raw(self.mean.eval(p))),
        );
        let cov = self.kernel.cross(&std_pts, &std_pts) * self.transform.y_scale.powi(2);
        (mean, cov)
    }

    /// Joint posterior mean vector and covariance matrix at `points`
    /// (raw scale). Falls back to the prior when no data is attached.
    pub fn posterior_mean_cov(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let Some(chol) = &self.chol else {
            return self.prior_mean_cov(points);
        };
        let std_pts: Vec<Vec<f64>> = points.iter().map(|p| self.transform.x_std(p)).collect();
        let k_star = self.kernel.cross(&std_pts, &self.x_train);
        let mean_std = DVector::from_iterator(
            std_pts.len(),
            std_pts
                .iter()
                .enumerate()
                .map(|(i, p)| self.mean.eval(p) + k_star.row(i).transpose().dot(&self.alpha)),
        );
        let solved = chol.solve(&k_star.transpose());
        let cov_std = self.kernel.cross(&std_pts, &std_pts) - &k_star * solved;
        let mean = mean_std.map(|m| self.transform.y_raw(m));
        let cov = cov_std * self.transform.y_scale.powi(2);
        (mean, cov)
    }

    /// Leave-one-out predictions from the full factorization (rank-one
    /// downdate formulas). The predicted variance includes the noise term,
    /// matching what a held-out observation would show.
    pub fn loo(&self) -> Result<Vec<LooPoint>, GpError> {
        if self.x_train.len() < 3 {
            return Err(GpError::TooFewPoints {
                need: 3,
                got: self.x_train.len(),
            });
        }
        let chol = self.chol.as_ref().expect("factorized");
        let kinv = chol.inverse();
        let mut out = Vec::with_capacity(self.x_train.len());
        for i in 0..self.x_train.len() {
            let kii = kinv[(i, i)];
            let var_std = 1.0 / kii;
            let mean_std = self.y_train[i] - self.alpha[i] / kii;
            out.push(LooPoint {
                mean: self.transform.y_raw(mean_std),
                variance: var_std * self.transform.y_scale.powi(2),
                std_residual: self.alpha[i] / kii.sqrt(),
            });
        }
        Ok(out)
    }
}
