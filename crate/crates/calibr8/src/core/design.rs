use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::error::CoreError;
use super::seed::rng_from;
use super::space::ParameterSpace;

/// Design-generation method for ensembles of simulator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    /// Stratifies each coordinate into `n` equal bins with one point per bin.
    LatinHypercube,
    UniformRandom,
    /// Cartesian product of per-coordinate bin midpoints; `n` must be a
    /// perfect d-th power.
    Grid,
}

/// Generate `n` design points inside the parameter box.
pub fn build_design(
    space: &ParameterSpace,
    n: usize,
    method: DesignMethod,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CoreError> {
    if n == 0 {
        return Err(CoreError::Parameter("design size must be >= 1".into()));
    }
    let d = space.dim();
    let lower = space.lower();
    let upper = space.upper();
    match method {
        DesignMethod::LatinHypercube => {
            let mut points = vec![vec![0.0; d]; n];
            for j in 0..d {
                let mut rng = rng_from(seed, j as u64);
                let mut strata: Vec<usize> = (0..n).collect();
                strata.shuffle(&mut rng);
                for (i, point) in points.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    let frac = (strata[i] as f64 + u) / n as f64;
                    point[j] = lower[j] + frac * (upper[j] - lower[j]);
                }
            }
            Ok(points)
        }
        DesignMethod::UniformRandom => {
            let points = (0..n)
                .map(|i| {
                    let mut rng = rng_from(seed, i as u64);
                    (0..d)
                        .map(|j| lower[j] + rng.random::<f64>() * (upper[j] - lower[j]))
                        .collect()
                })
                .collect();
            Ok(points)
        }
        DesignMethod::Grid => {
            let k = (n as f64).powf(1.0 / d as f64).round() as usize;
            if k == 0 || k.pow(d as u32) != n {
                return Err(CoreError::Parameter(format!(
                    "grid design needs n to be a perfect {d}-th power, got {n}"
                )));
            }
            let mut points = Vec::with_capacity(n);
            for flat in 0..n {
                let mut idx = flat;
                let mut point = vec![0.0; d];
                for j in (0..d).rev() {
                    let bin = idx % k;
                    idx /= k;
                    let frac = (bin as f64 + 0.5) / k as f64;
                    point[j] = lower[j] + frac * (upper[j] - lower[j]);
                }
                points.push(point);
            }
            Ok(points)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::space::ParamDim;

    fn unit_space(d: usize) -> ParameterSpace {
        ParameterSpace::new(
            (0..d)
                .map(|j| ParamDim::uniform(&format!("x{j}"), 0.0, 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn grid_1d_gives_bin_midpoints() {
        let pts = build_design(&unit_space(1), 4, DesignMethod::Grid, 0).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn grid_requires_perfect_power() {
        assert!(build_design(&unit_space(2), 10, DesignMethod::Grid, 0).is_err());
        assert!(build_design(&unit_space(2), 9, DesignMethod::Grid, 0).is_ok());
    }

    #[test]
    fn lhs_stratifies_every_coordinate() {
        let n = 10;
        let pts = build_design(&unit_space(2), n, DesignMethod::LatinHypercube, 42).unwrap();
        for j in 0..2 {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| ((p[j] * n as f64).floor() as usize).min(n - 1))
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..n).collect::<Vec<_>>(), "coordinate {j}");
        }
    }

    #[test]
    fn uniform_random_is_reproducible_and_in_bounds() {
        let space = ParameterSpace::new(vec![ParamDim::uniform("x", 2.0, 6.0)]).unwrap();
        let a = build_design(&space, 2, DesignMethod::UniformRandom, 9).unwrap();
        let b = build_design(&space, 2, DesignMethod::UniformRandom, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (2.0..=6.0).contains(&p[0])));
    }

    #[test]
    fn empty_design_is_an_error() {
        assert!(build_design(&unit_space(1), 0, DesignMethod::LatinHypercube, 0).is_err());
    }
}
