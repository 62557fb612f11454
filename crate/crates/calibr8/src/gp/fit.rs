use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::kernel::{Kernel, KernelKind};
use super::model::{BasisKind, GpError, GpModel, MeanFn, Transform};
use crate::core::rng_from;

/// Mean-function family requested from `gp_fit`; coefficients are estimated
/// by generalized least squares and profiled out of the marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Zero,
    Constant,
    Linear,
}

impl MeanKind {
    fn basis(self) -> BasisKind {
        match self {
            MeanKind::Zero => BasisKind::Zero,
            MeanKind::Constant => BasisKind::Constant,
            MeanKind::Linear => BasisKind::Linear,
        }
    }
}

/// Observation-noise treatment during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Fixed(f64),
    Estimated,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 150,
            seed: 0,
        }
    }
}

/// Hyperparameter vector layout: `[log l_1 .. log l_d, log s2, (log noise)]`.
fn unpack(
    kind: KernelKind,
    theta: &[f64],
    d: usize,
    noise: &NoiseSpec,
) -> (Kernel, f64) {
    let lengthscales: Vec<f64> = theta[..d].iter().map(|t| t.exp()).collect();
    let signal_variance = theta[d].exp();
    let noise_variance = match noise {
        NoiseSpec::Fixed(v) => *v,
        NoiseSpec::Estimated => theta[d + 1].exp(),
    };
    (
        Kernel {
            kind,
            lengthscales,
            signal_variance,
            jitter: super::kernel::DEFAULT_JITTER,
        },
        noise_variance,
    )
}

fn basis_matrix(kind: BasisKind, x: &[Vec<f64>]) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = x.iter().map(|xi| MeanFn::basis(kind, xi)).collect();
    let p = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(x.len(), p, |i, j| rows[i][j])
}

/// Generalized-least-squares mean coefficients `(H' K^-1 H)^-1 H' K^-1 y`.
fn gls_beta(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Option<DVector<f64>> {
    if h.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    let kinv_h = chol.solve(h);
    let m = h.transpose() * &kinv_h;
    let rhs = kinv_h.transpose() * y;
    Cholesky::new(m).map(|c| c.solve(&rhs))
}

/// Log marginal likelihood at `theta`, or `None` when the covariance cannot
/// be factorized at this setting. Mean coefficients are profiled out at their
/// GLS optimum.
pub fn log_marginal(
    kind: KernelKind,
    mean: MeanKind,
    x: &[Vec<f64>],
    y: &[f64],
    theta: &[f64],
    noise: &NoiseSpec,
) -> Option<f64> {
    let d = x[0].len();
    let n = x.len();
    let (kernel, noise_variance) = unpack(kind, theta, d, noise);
    let gram = kernel.gram(x, noise_variance);
    let chol = Cholesky::new(gram)?;
    let yv = DVector::from_column_slice(y);
    let h = basis_matrix(mean.basis(), x);
    let beta = gls_beta(&chol, &h, &yv)?;
    let r = if h.ncols() == 0 {
        yv.clone()
    } else {
        &yv - &h * &beta
    };
    let alpha = chol.solve(&r);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    Some(
        -0.5 * r.dot(&alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln(),
    )
}

/// Log marginal likelihood and its gradient with respect to `theta`.
///
/// Mean coefficients are profiled out at their GLS optimum, where the
/// envelope theorem makes the profiled gradient equal the partial gradient.
/// Returns `None` when the covariance cannot be factorized at this setting.
pub fn log_marginal_and_grad(
    kind: KernelKind,
    mean: MeanKind,
    x: &[Vec<f64>],
    y: &[f64],
    theta: &[f64],
    noise: &NoiseSpec,
) -> Option<(f64, Vec<f64>)> {
    let d = x[0].len();
    let n = x.len();
    let (kernel, noise_variance) = unpack(kind, theta, d, noise);
    let gram = kernel.gram(x, noise_variance);
    let chol = Cholesky::new(gram)?;
    let yv = DVector::from_column_slice(y);
    let h = basis_matrix(mean.basis(), x);
    let beta = gls_beta(&chol, &h, &yv)?;
    let r = if h.ncols() == 0 {
        yv.clone()
    } else {
        &yv - &h * &beta
    };
    let alpha = chol.solve(&r);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let lml = -0.5 * r.dot(&alpha)
        - log_det_half
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let kinv = chol.inverse();
    let mut grad = Vec::with_capacity(theta.len());
    let quad_minus_trace = |dk: &DMatrix<f64>| -> f64 {
        let quad = alpha.dot(&(dk * &alpha));
        let trace = kinv.iter().zip(dk.iter()).map(|(a, b)| a * b).sum::<f64>();
        0.5 * (quad - trace)
    };
    for dim in 0..d {
        let dk = DMatrix::from_fn(n, n, |i, j| kernel.grad_log_lengthscale(&x[i], &x[j], dim));
        grad.push(quad_minus_trace(&dk));
    }
    let dk_sig = kernel.cross(x, x);
    grad.push(quad_minus_trace(&dk_sig));
    if matches!(noise, NoiseSpec::Estimated) {
        let dk_noise = DMatrix::from_diagonal(&DVector::from_element(n, noise_variance));
        grad.push(quad_minus_trace(&dk_noise));
    }
    Some((lml, grad))
}

/// One local search: simplex minimization of the negative log marginal
/// likelihood with soft box handling (out-of-box settings are clamped and
/// penalized by their squared excursion).
fn local_search(
    kind: KernelKind,
    mean: MeanKind,
    x: &[Vec<f64>],
    y: &[f64],
    noise: &NoiseSpec,
    theta0: Vec<f64>,
    bounds: &[(f64, f64)],
    max_evals: usize,
) -> (f64, Vec<f64>) {
    let objective = |theta: &[f64]| -> f64 {
        let mut clamped = theta.to_vec();
        let mut penalty = 0.0;
        for (t, &(lo, hi)) in clamped.iter_mut().zip(bounds) {
            let c = t.clamp(lo, hi);
            penalty += (*t - c) * (*t - c);
            *t = c;
        }
        match log_marginal(kind, mean, x, y, &clamped, noise) {
            Some(lml) => -lml + penalty,
            None => f64::INFINITY,
        }
    };
    let steps = vec![0.3; theta0.len()];
    let res = crate::optim::nelder_mead(
        objective,
        &theta0,
        &steps,
        &crate::optim::NmOptions {
            max_evals,
            ..Default::default()
        },
    );
    let mut theta = res.x;
    for (t, &(lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(lo, hi);
    }
    (-res.f, theta)
}

/// Fit a GP by maximizing the log marginal likelihood over hyperparameters,
/// selected over `opts.restarts` initializations (ties broken by restart
/// index). Inputs are standardized to the unit box and outputs to zero mean
/// and unit variance internally; the transforms are recorded on the model.
pub fn gp_fit(
    x: &[Vec<f64>],
    y: &[f64],
    kind: KernelKind,
    mean: MeanKind,
    noise: NoiseSpec,
    opts: &FitOptions,
) -> Result<GpModel, GpError> {
    if x.len() < 2 {
        return Err(GpError::TooFewPoints {
            need: 2,
            got: x.len(),
        });
    }
    if x.len() != y.len() {
        return Err(GpError::Invalid(format!(
            "{} inputs vs {} outputs",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(GpError::Invalid("ragged input rows".into()));
    }
    let transform = Transform::from_data(x, y);
    let x_std: Vec<Vec<f64>> = x.iter().map(|r| transform.x_std(r)).collect();
    let y_std: Vec<f64> = y.iter().map(|&v| transform.y_std(v)).collect();

    let n_theta = d + 1 + usize::from(matches!(noise, NoiseSpec::Estimated));
    let mut bounds = vec![(0.01f64.ln(), 100f64.ln()); d];
    bounds.push(((1e-8f64).ln(), 1e3f64.ln()));
    if matches!(noise, NoiseSpec::Estimated) {
        bounds.push(((1e-10f64).ln(), 10f64.ln()));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let restarts = opts.restarts.max(1);
    for r in 0..restarts {
        let mut theta0 = vec![0.0; n_theta];
        if r == 0 {
            theta0[..d].fill(0.5f64.ln());
            theta0[d] = 0.0;
            if n_theta > d + 1 {
                theta0[d + 1] = 0.05f64.ln();
            }
        } else {
            let mut rng = rng_from(opts.seed, r as u64);
            for t in theta0.iter_mut().take(d) {
                *t = rng.random_range(0.05f64.ln()..2.0f64.ln());
            }
            theta0[d] = rng.random_range(0.2f64.ln()..5.0f64.ln());
            if n_theta > d + 1 {
                theta0[d + 1] = rng.random_range(1e-6f64.ln()..0.5f64.ln());
            }
        }
        let (f, theta) = local_search(
            kind,
            mean,
            &x_std,
            &y_std,
            &noise,
            theta0,
            &bounds,
            opts.max_iters * 4,
        );
        if best.as_ref().is_none_or(|(fb, _)| f > *fb) {
            best = Some((f, theta));
        }
    }
    let (lml, theta) = best.expect("at least one restart");
    if !lml.is_finite() {
        return Err(GpError::Conditioning {
            jitter: super::kernel::MAX_JITTER,
        });
    }
    log::debug!("gp_fit: lml {lml:.4}; hyperparameter uncertainty is ignored (point estimate)");

    let (kernel, noise_variance) = unpack(kind, &theta, d, &noise);
    let gram = kernel.gram(&x_std, noise_variance);
    let chol = Cholesky::new(gram).ok_or(GpError::Conditioning {
        jitter: kernel.jitter,
    })?;
    let yv = DVector::from_column_slice(&y_std);
    let h = basis_matrix(mean.basis(), &x_std);
    let beta = gls_beta(&chol, &h, &yv).ok_or_else(|| {
        GpError::Invalid("singular mean-basis normal equations".into())
    })?;
    let mean_fn = match mean {
        MeanKind::Zero => MeanFn::Zero,
        MeanKind::Constant => MeanFn::Constant { value: beta[0] },
        MeanKind::Linear => MeanFn::Linear {
            intercept: beta[0],
            coeffs: beta.as_slice()[1..].to_vec(),
        },
    };
    GpModel::with_standardized(kernel, mean_fn, noise_variance, x_std, y_std, transform)
}
