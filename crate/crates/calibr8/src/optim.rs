//! Derivative-free simplex minimizer shared by hyperparameter fitting and
//! point estimation.

pub(crate) struct NmOptions {
    pub max_evals: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            max_evals: 400,
            f_tol: 1e-11,
            x_tol: 1e-10,
        }
    }
}

pub(crate) struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
}

fn order_key(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Nelder-Mead minimization from `x0` with per-coordinate initial steps.
///
/// Infinite objective values are allowed (they sort last), so box constraints
/// can be imposed by returning `+inf` outside the feasible set.
pub(crate) fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], opts: &NmOptions) -> NmResult
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut n_evals = 0usize;
    let mut eval = |x: &[f64], n_evals: &mut usize| -> f64 {
        *n_evals += 1;
        order_key(f(x))
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(x0, &mut n_evals);
    simplex.push((x0.to_vec(), f0));
    for j in 0..d {
        let mut xj = x0.to_vec();
        xj[j] += if steps[j] != 0.0 { steps[j] } else { 1e-3 };
        let fj = eval(&xj, &mut n_evals);
        simplex.push((xj, fj));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while n_evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("keys are ordered"));
        let f_best = simplex[0].1;
        let f_worst = simplex[d].1;
        let spread_f = (f_worst - f_best).abs();
        let spread_x = (0..d)
            .map(|j| {
                simplex
                    .iter()
                    .map(|(x, _)| x[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        if (spread_f < opts.f_tol && f_best.is_finite()) || spread_x < opts.x_tol {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_r = eval(&reflected, &mut n_evals);

        if f_r < simplex[0].1 {
            let expanded: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_e = eval(&expanded, &mut n_evals);
            simplex[d] = if f_e < f_r {
                (expanded, f_e)
            } else {
                (reflected, f_r)
            };
        } else if f_r < simplex[d - 1].1 {
            simplex[d] = (reflected, f_r);
        } else {
            let contracted: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let f_c = eval(&contracted, &mut n_evals);
            if f_c < simplex[d].1 {
                simplex[d] = (contracted, f_c);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    let fs = eval(&shrunk, &mut n_evals);
                    *entry = (shrunk, fs);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("keys are ordered"));
    let (x, f) = simplex.swap_remove(0);
    NmResult { x, f, n_evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[0.5, 0.5],
            &NmOptions::default(),
        );
        assert!((res.x[0] - 1.5).abs() < 1e-4, "{:?}", res.x);
        assert!((res.x[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn respects_infinite_barrier() {
        let res = nelder_mead(
            |x| {
                if x[0] < 0.0 {
                    f64::INFINITY
                } else {
                    (x[0] - 0.1).powi(2)
                }
            },
            &[0.4],
            &[0.2],
            &NmOptions::default(),
        );
        assert!(res.x[0] >= 0.0);
        assert!((res.x[0] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn handles_rosenbrock_valley() {
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.0, 1.0],
            &[0.3, 0.3],
            &NmOptions {
                max_evals: 2000,
                ..Default::default()
            },
        );
        assert!(res.f < 1e-6, "f = {}", res.f);
    }
}
