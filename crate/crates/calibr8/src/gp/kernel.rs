use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "squared-exponential")]
    SquaredExponential,
    #[serde(rename = "matern-5/2")]
    Matern52,
}

/// Stationary covariance function with per-dimension lengthscales (automatic
/// relevance determination).
///
/// `jitter` is the diagonal regularizer added to Gram matrices, so
/// `k(a, a) = signal_variance + jitter` on the training diagonal. Off-diagonal
/// and cross covariances never include it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub jitter: f64,
}

pub const DEFAULT_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-4;

impl Kernel {
    pub fn squared_exponential(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        Self {
            kind: KernelKind::SquaredExponential,
            lengthscales,
            signal_variance,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn matern52(lengthscales: Vec<f64>, signal_variance: f64) -> Self {
        Self {
            kind: KernelKind::Matern52,
            lengthscales,
            signal_variance,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((&ai, &bi), &l)| {
                let d = (ai - bi) / l;
                d * d
            })
            .sum()
    }

    /// Covariance between two points, without jitter.
    pub fn value(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2 = self.scaled_sq_dist(a, b);
        match self.kind {
            KernelKind::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
            KernelKind::Matern52 => {
                let r = r2.sqrt();
                let s5r = 5.0_f64.sqrt() * r;
                self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }

    /// Gram matrix over `x`, with `jitter + extra_diag` added to the diagonal.
    pub fn gram(&self, x: &[Vec<f64>], extra_diag: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.value(&x[i], &x[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += self.jitter + extra_diag;
        }
        k
    }

    /// Cross-covariance matrix `k(a_i, b_j)`, no jitter.
    pub fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.value(&a[i], &b[j]))
    }

    /// Derivative of the Gram matrix entry `(a, b)` with respect to
    /// `log lengthscale[dim]`.
    pub fn grad_log_lengthscale(&self, a: &[f64], b: &[f64], dim: usize) -> f64 {
        let l = self.lengthscales[dim];
        let dd = (a[dim] - b[dim]) / l;
        let scaled = dd * dd;
        match self.kind {
            KernelKind::SquaredExponential => self.value(a, b) * scaled,
            KernelKind::Matern52 => {
                let r2 = self.scaled_sq_dist(a, b);
                let r = r2.sqrt();
                let s5r = 5.0_f64.sqrt() * r;
                (5.0 / 3.0) * self.signal_variance * (1.0 + s5r) * (-s5r).exp() * scaled
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_carries_signal_plus_jitter() {
        for kernel in [
            Kernel::squared_exponential(vec![0.5, 2.0], 1.7),
            Kernel::matern52(vec![0.5, 2.0], 1.7),
        ] {
            let x = vec![vec![0.3, -1.0], vec![1.0, 0.4]];
            let g = kernel.gram(&x, 0.0);
            assert!((g[(0, 0)] - (1.7 + kernel.jitter)).abs() < 1e-15);
            assert_eq!(g[(0, 1)], g[(1, 0)]);
            assert!(g[(0, 1)] < 1.7);
        }
    }

    #[test]
    fn lengthscale_gradients_match_finite_differences() {
        let a = vec![0.3, -0.2];
        let b = vec![0.9, 0.5];
        for kind in [KernelKind::SquaredExponential, KernelKind::Matern52] {
            for dim in 0..2 {
                let make = |log_l: f64| {
                    let mut ls = vec![0.7, 1.3];
                    ls[dim] = log_l.exp();
                    Kernel {
                        kind,
                        lengthscales: ls,
                        signal_variance: 2.1,
                        jitter: 0.0,
                    }
                };
                let base = vec![0.7f64, 1.3];
                let l0 = base[dim].ln();
                let h = 1e-6;
                let fd = (make(l0 + h).value(&a, &b) - make(l0 - h).value(&a, &b)) / (2.0 * h);
                let analytic = make(l0).grad_log_lengthscale(&a, &b, dim);
                assert!(
                    (fd - analytic).abs() < 1e-7,
                    "{kind:?} dim {dim}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn kernels_decay_with_distance() {
        let kernel = Kernel::matern52(vec![1.0], 1.0);
        let near = kernel.value(&[0.0], &[0.1]);
        let far = kernel.value(&[0.0], &[10.0]);
        assert!(near > far);
        assert!(far < 1e-3);
    }
}
