use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::error::{CoreError, SimulatorError};
use super::seed::split_seed;
use super::simulator::Simulator;
use super::space::ControlInput;

/// How `run_ensemble` reacts to a failing evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    /// Abort with the failing point index.
    Abort,
    /// Drop the failing point and record its index in the provenance.
    SkipAndRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub method: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<usize>,
}

/// A design matrix of inputs paired with simulator outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub inputs: Vec<Vec<f64>>,
    pub controls: Vec<ControlInput>,
    pub outputs: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Append one evaluated point.
    pub fn push(&mut self, x: Vec<f64>, u: ControlInput, output: Vec<f64>) {
        self.inputs.push(x);
        self.controls.push(u);
        self.outputs.push(output);
    }

    /// Column `j` of the output matrix.
    pub fn output_column(&self, j: usize) -> Vec<f64> {
        self.outputs.iter().map(|row| row[j]).collect()
    }
}

/// Run the simulator over a design, one output row per design point.
///
/// Per-point seeds derive from `(seed, point index)`, and results are merged
/// in design order, so the ensemble is bit-identical for every `parallelism`
/// setting. `parallelism = 0` uses the ambient rayon thread pool.
pub fn run_ensemble(
    sim: &dyn Simulator,
    design: &[Vec<f64>],
    u: &ControlInput,
    seed: u64,
    parallelism: usize,
    policy: ErrorPolicy,
) -> Result<Ensemble, CoreError> {
    if design.is_empty() {
        return Err(CoreError::Parameter("design must be non-empty".into()));
    }
    let eval_one = |(i, x): (usize, &Vec<f64>)| -> (usize, Result<Vec<f64>, SimulatorError>) {
        (i, sim.run(x, &u.values, split_seed(seed, i as u64)))
    };
    let results: Vec<(usize, Result<Vec<f64>, SimulatorError>)> = match parallelism {
        0 => design.par_iter().enumerate().map(eval_one).collect(),
        1 => design.iter().enumerate().map(eval_one).collect(),
        p => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(p)
                .build()
                .map_err(|e| CoreError::Parameter(format!("thread pool: {e}")))?;
            pool.install(|| design.par_iter().enumerate().map(eval_one).collect())
        }
    };

    let mut ensemble = Ensemble {
        provenance: Provenance {
            seed,
            method: "run_ensemble".into(),
            skipped: Vec::new(),
        },
        ..Default::default()
    };
    for (i, result) in results {
        match result {
            Ok(out) => ensemble.push(design[i].clone(), u.clone(), out),
            Err(source) => match policy {
                ErrorPolicy::Abort => return Err(CoreError::Evaluation { index: i, source }),
                ErrorPolicy::SkipAndRecord => ensemble.provenance.skipped.push(i),
            },
        }
    }
    Ok(ensemble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::simulator::deterministic_fn;

    #[test]
    fn identity_simulator_reproduces_design() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| vec![x[0]]);
        let design = vec![vec![0.1], vec![0.5], vec![0.9]];
        let ens =
            run_ensemble(&sim, &design, &ControlInput::empty(), 3, 1, ErrorPolicy::Abort).unwrap();
        assert_eq!(ens.outputs, design);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let sim = FnStochastic;
        let design: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64 / 64.0]).collect();
        let serial =
            run_ensemble(&sim, &design, &ControlInput::empty(), 11, 1, ErrorPolicy::Abort)
                .unwrap();
        let parallel =
            run_ensemble(&sim, &design, &ControlInput::empty(), 11, 8, ErrorPolicy::Abort)
                .unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn empty_design_is_rejected() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| vec![x[0]]);
        assert!(run_ensemble(
            &sim,
            &[],
            &ControlInput::empty(),
            0,
            1,
            ErrorPolicy::Abort
        )
        .is_err());
    }

    #[test]
    fn abort_names_failing_index() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| {
            if x[0] > 0.5 {
                vec![f64::INFINITY]
            } else {
                vec![x[0]]
            }
        });
        let design = vec![vec![0.1], vec![0.9], vec![0.2]];
        match run_ensemble(&sim, &design, &ControlInput::empty(), 0, 1, ErrorPolicy::Abort) {
            Err(CoreError::Evaluation { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn skip_policy_records_failures() {
        let sim = deterministic_fn(1, 1, |x: &[f64]| {
            if x[0] > 0.5 {
                vec![f64::NAN]
            } else {
                vec![x[0]]
            }
        });
        let design = vec![vec![0.1], vec![0.9], vec![0.2]];
        let ens = run_ensemble(
            &sim,
            &design,
            &ControlInput::empty(),
            0,
            1,
            ErrorPolicy::SkipAndRecord,
        )
        .unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens.provenance.skipped, vec![1]);
    }

    /// Stochastic simulator whose output depends only on (x, seed).
    struct FnStochastic;

    impl Simulator for FnStochastic {
        fn input_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn is_stochastic(&self) -> bool {
            true
        }
        fn run(&self, x: &[f64], _u: &[f64], seed: u64) -> Result<Vec<f64>, SimulatorError> {
            Ok(vec![x[0] + (seed % 97) as f64 * 1e-3])
        }
    }
}
