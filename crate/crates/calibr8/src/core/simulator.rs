use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::error::{CoreError, SimulatorError};
use super::space::{ControlInput, ParameterSpace};

/// Evaluable black-box map `(x, u, seed) -> output vector`.
///
/// Deterministic simulators must return bit-identical outputs for identical
/// `(x, u)` regardless of seed; stochastic simulators must return identical
/// outputs for identical `(x, u, seed)`.
pub trait Simulator: Send + Sync {
    fn input_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn is_stochastic(&self) -> bool;
    fn run(&self, x: &[f64], u: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError>;
}

/// Shared handle to a simulator.
pub type BlackBoxSimulator = Arc<dyn Simulator>;

/// Simulator backed by a closure.
pub struct FnSimulator<F> {
    input_dim: usize,
    control_dim: usize,
    output_dim: usize,
    stochastic: bool,
    f: F,
}

impl<F> FnSimulator<F>
where
    F: Fn(&[f64], &[f64], u64) -> Vec<f64> + Send + Sync,
{
    pub fn new(
        input_dim: usize,
        control_dim: usize,
        output_dim: usize,
        stochastic: bool,
        f: F,
    ) -> Self {
        Self {
            input_dim,
            control_dim,
            output_dim,
            stochastic,
            f,
        }
    }
}

/// Deterministic single-control-free simulator from a closure on `x` alone.
pub fn deterministic_fn<F>(
    input_dim: usize,
    output_dim: usize,
    f: F,
) -> FnSimulator<impl Fn(&[f64], &[f64], u64) -> Vec<f64> + Send + Sync>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    FnSimulator::new(input_dim, 0, output_dim, false, move |x, _u, _seed| f(x))
}

impl<F> Simulator for FnSimulator<F>
where
    F: Fn(&[f64], &[f64], u64) -> Vec<f64> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    fn run(&self, x: &[f64], u: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        if x.len() != self.input_dim {
            return Err(SimulatorError::Dimension {
                what: "inputs",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if u.len() != self.control_dim {
            return Err(SimulatorError::Dimension {
                what: "control inputs",
                expected: self.control_dim,
                got: u.len(),
            });
        }
        let out = (self.f)(x, u, seed);
        check_output(&out, self.output_dim, x)
    }
}

pub(crate) fn check_output(
    out: &[f64],
    output_dim: usize,
    x: &[f64],
) -> Result<Vec<f64>, SimulatorError> {
    if out.len() != output_dim {
        return Err(SimulatorError::Dimension {
            what: "outputs",
            expected: output_dim,
            got: out.len(),
        });
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SimulatorError::NonFinite { x: x.to_vec() });
    }
    Ok(out.to_vec())
}

/// Evaluate `sim` at a point of the parameter space.
///
/// Checks bounds against `space` before dispatching; the simulator itself
/// checks dimensions and rejects non-finite outputs.
pub fn evaluate(
    sim: &dyn Simulator,
    space: &ParameterSpace,
    x: &[f64],
    u: &ControlInput,
    seed: u64,
) -> Result<Vec<f64>, CoreError> {
    if !space.contains(x) {
        return Err(CoreError::OutOfBounds { x: x.to_vec() });
    }
    Ok(sim.run(x, &u.values, seed)?)
}

/// Wrapper that counts evaluations and optionally enforces a budget.
///
/// The count is reserved atomically before the inner simulator runs, so the
/// recorded number of evaluations never exceeds the budget even under
/// concurrent dispatch.
pub struct MeteredSimulator {
    inner: BlackBoxSimulator,
    count: AtomicU64,
    budget: Option<u64>,
}

impl MeteredSimulator {
    pub fn new(inner: BlackBoxSimulator, budget: Option<u64>) -> Arc<Self> {
        Arc::new(Self {
            inner,
            count: AtomicU64::new(0),
            budget,
        })
    }

    pub fn count(&self) -> u64 {
        let c = self.count.load(Ordering::SeqCst);
        match self.budget {
            Some(b) => c.min(b),
            None => c,
        }
    }
}

impl Simulator for MeteredSimulator {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn is_stochastic(&self) -> bool {
        self.inner.is_stochastic()
    }

    fn run(&self, x: &[f64], u: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
        if let Some(b) = self.budget {
            let reserved = self
                .count
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| {
                    if c < b {
                        Some(c + 1)
                    } else {
                        None
                    }
                });
            if reserved.is_err() {
                return Err(SimulatorError::BudgetExhausted);
            }
        } else {
            self.count.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.run(x, u, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::space::ParamDim;

    fn unit_space() -> ParameterSpace {
        ParameterSpace::new(vec![ParamDim::uniform("x", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn evaluate_rejects_out_of_bounds() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| vec![x[0]]);
        let err = evaluate(
            &sim,
            &unit_space(),
            &[1.5],
            &ControlInput::empty(),
            0,
        );
        assert!(matches!(err, Err(CoreError::OutOfBounds { .. })));
    }

    #[test]
    fn evaluate_rejects_non_finite_output() {
        let sim = deterministic_fn(1, 1, |_x: &[f64]| vec![f64::NAN]);
        let err = evaluate(&sim, &unit_space(), &[0.5], &ControlInput::empty(), 0);
        assert!(matches!(
            err,
            Err(CoreError::Simulator(SimulatorError::NonFinite { .. }))
        ));
    }

    #[test]
    fn deterministic_sim_ignores_seed() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| vec![3.0 * x[0]]);
        let a = sim.run(&[0.25], &[], 1).unwrap();
        let b = sim.run(&[0.25], &[], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metered_budget_is_exact() {
        let sim: BlackBoxSimulator =
            Arc::new(deterministic_fn(1, 1, |x: &[f64]| vec![x[0]]));
        let metered = MeteredSimulator::new(sim, Some(3));
        for _ in 0..3 {
            metered.run(&[0.5], &[], 0).unwrap();
        }
        assert!(matches!(
            metered.run(&[0.5], &[], 0),
            Err(SimulatorError::BudgetExhausted)
        ));
        assert_eq!(metered.count(), 3);
    }
}
