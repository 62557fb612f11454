use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::error::CoreError;

/// Prior distribution of one coordinate, restricted to its `[lower, upper]` box.
///
/// Log-densities are finite on the box and `-inf` outside it; out-of-bounds
/// proposals are rejected at the boundary rather than clipped so samplers stay
/// measure-correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Uniform,
    TruncatedNormal { mean: f64, sd: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        match self {
            PriorSpec::Uniform => Ok(()),
            PriorSpec::TruncatedNormal { sd, .. } if *sd > 0.0 && sd.is_finite() => Ok(()),
            PriorSpec::TruncatedNormal { sd, .. } => Err(CoreError::Parameter(format!(
                "truncated-normal sd must be positive and finite, got {sd}"
            ))),
        }
    }

    /// Log-density at `x` given the coordinate bounds. `-inf` outside `[lower, upper]`.
    pub fn log_density(&self, x: f64, lower: f64, upper: f64) -> f64 {
        if !(lower..=upper).contains(&x) {
            return f64::NEG_INFINITY;
        }
        match self {
            PriorSpec::Uniform => -(upper - lower).ln(),
            PriorSpec::TruncatedNormal { mean, sd } => {
                let z = (x - mean) / sd;
                let norm = Normal::standard();
                let mass = norm.cdf((upper - mean) / sd) - norm.cdf((lower - mean) / sd);
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - mass.ln()
            }
        }
    }

    /// Draw one value inside `[lower, upper]` by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, lower: f64, upper: f64) -> f64 {
        let u: f64 = rng.random();
        match self {
            PriorSpec::Uniform => lower + u * (upper - lower),
            PriorSpec::TruncatedNormal { mean, sd } => {
                let norm = Normal::standard();
                let a = norm.cdf((lower - mean) / sd);
                let b = norm.cdf((upper - mean) / sd);
                let p = (a + u * (b - a)).clamp(1e-15, 1.0 - 1e-15);
                (mean + sd * norm.inverse_cdf(p)).clamp(lower, upper)
            }
        }
    }

    /// Mean of the prior restricted to `[lower, upper]`.
    pub fn mean(&self, lower: f64, upper: f64) -> f64 {
        match self {
            PriorSpec::Uniform => 0.5 * (lower + upper),
            PriorSpec::TruncatedNormal { mean, sd } => {
                let norm = Normal::standard();
                let alpha = (lower - mean) / sd;
                let beta = (upper - mean) / sd;
                let z = norm.cdf(beta) - norm.cdf(alpha);
                let phi = |t: f64| {
                    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
                };
                mean + sd * (phi(alpha) - phi(beta)) / z
            }
        }
    }

    /// Standard deviation of the prior restricted to `[lower, upper]`.
    pub fn sd(&self, lower: f64, upper: f64) -> f64 {
        match self {
            PriorSpec::Uniform => (upper - lower) / 12.0_f64.sqrt(),
            PriorSpec::TruncatedNormal { mean, sd } => {
                let norm = Normal::standard();
                let alpha = (lower - mean) / sd;
                let beta = (upper - mean) / sd;
                let z = norm.cdf(beta) - norm.cdf(alpha);
                let phi =
                    |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let m1 = (phi(alpha) - phi(beta)) / z;
                let v = 1.0 + (alpha * phi(alpha) - beta * phi(beta)) / z - m1 * m1;
                sd * v.max(0.0).sqrt()
            }
        }
    }
}

/// One named, bounded, prior-equipped coordinate of the calibration input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub prior: PriorSpec,
}

impl ParamDim {
    pub fn uniform(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            prior: PriorSpec::Uniform,
        }
    }

    pub fn truncated_normal(name: &str, lower: f64, upper: f64, mean: f64, sd: f64) -> Self {
        Self {
            name: name.to_string(),
            lower,
            upper,
            prior: PriorSpec::TruncatedNormal { mean, sd },
        }
    }
}

/// The box `X` the calibration input lives in, with a prior per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    dims: Vec<ParamDim>,
}

impl ParameterSpace {
    pub fn new(dims: Vec<ParamDim>) -> Result<Self, CoreError> {
        if dims.is_empty() {
            return Err(CoreError::Parameter(
                "parameter space needs at least one dimension".into(),
            ));
        }
        for d in &dims {
            if !(d.lower < d.upper) {
                return Err(CoreError::Parameter(format!(
                    "dimension '{}' must have lower < upper, got [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            d.prior.validate()?;
        }
        Ok(Self { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[ParamDim] {
        &self.dims
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.upper).collect()
    }

    /// True when `x` lies inside the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dims.len()
            && x.iter()
                .zip(&self.dims)
                .all(|(&xi, d)| (d.lower..=d.upper).contains(&xi))
    }

    /// Joint log prior density; `-inf` outside the box.
    pub fn log_prior(&self, x: &[f64]) -> f64 {
        if x.len() != self.dims.len() {
            return f64::NEG_INFINITY;
        }
        x.iter()
            .zip(&self.dims)
            .map(|(&xi, d)| d.prior.log_density(xi, d.lower, d.upper))
            .sum()
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| d.prior.sample(rng, d.lower, d.upper))
            .collect()
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| d.prior.mean(d.lower, d.upper))
            .collect()
    }

    pub fn prior_sd(&self) -> Vec<f64> {
        self.dims
            .iter()
            .map(|d| d.prior.sd(d.lower, d.upper))
            .collect()
    }
}

/// Control input `u`: simulator settings that are not estimated, such as the
/// experimental conditions under which data were collected. May be empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub values: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

impl ControlInput {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(values: Vec<f64>, label: &str) -> Self {
        Self {
            values,
            label: label.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::seed::rng_from;

    /// Simpson's rule over [lo, hi].
    fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n } else { n + 1 };
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn priors_integrate_to_one() {
        let cases = [
            (PriorSpec::Uniform, -2.0, 6.0),
            (
                PriorSpec::TruncatedNormal {
                    mean: 0.0,
                    sd: 1.0,
                },
                -5.0,
                5.0,
            ),
            (
                PriorSpec::TruncatedNormal {
                    mean: 1.5,
                    sd: 0.4,
                },
                0.0,
                2.0,
            ),
        ];
        for (prior, lo, hi) in cases {
            let total = integrate(|x| prior.log_density(x, lo, hi).exp(), lo, hi, 2000);
            assert!(
                (total - 1.0).abs() < 1e-6,
                "prior {prior:?} integrates to {total}"
            );
        }
    }

    #[test]
    fn log_density_is_neg_infinite_outside_bounds() {
        let p = PriorSpec::Uniform;
        assert_eq!(p.log_density(1.5, 0.0, 1.0), f64::NEG_INFINITY);
        let t = PriorSpec::TruncatedNormal {
            mean: 0.0,
            sd: 1.0,
        };
        assert_eq!(t.log_density(-5.1, -5.0, 5.0), f64::NEG_INFINITY);
        assert!(t.log_density(0.0, -5.0, 5.0).is_finite());
    }

    #[test]
    fn truncated_normal_moments_match_samples() {
        let prior = PriorSpec::TruncatedNormal {
            mean: 1.0,
            sd: 2.0,
        };
        let (lo, hi) = (-1.0, 4.0);
        let mut rng = rng_from(7, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| prior.sample(&mut rng, lo, hi)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - prior.mean(lo, hi)).abs() < 0.01);
        assert!((var.sqrt() - prior.sd(lo, hi)).abs() < 0.01);
        assert!(draws.iter().all(|d| (lo..=hi).contains(d)));
    }

    #[test]
    fn space_rejects_inverted_bounds() {
        let err = ParameterSpace::new(vec![ParamDim::uniform("x", 1.0, 1.0)]);
        assert!(err.is_err());
    }

    #[test]
    fn log_prior_sums_over_dims() {
        let space = ParameterSpace::new(vec![
            ParamDim::uniform("a", 0.0, 2.0),
            ParamDim::uniform("b", 0.0, 4.0),
        ])
        .unwrap();
        let lp = space.log_prior(&[1.0, 1.0]);
        assert!((lp - (-(2.0f64.ln()) - 4.0f64.ln())).abs() < 1e-12);
        assert_eq!(space.log_prior(&[1.0, 5.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn serde_round_trip() {
        let space = ParameterSpace::new(vec![ParamDim::truncated_normal(
            "theta", -5.0, 5.0, 0.0, 1.0,
        )])
        .unwrap();
        let json = serde_json::to_string(&space).unwrap();
        let back: ParameterSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(space, back);
    }
}
