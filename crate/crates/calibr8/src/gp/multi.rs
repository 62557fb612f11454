use serde::{Deserialize, Serialize};

use super::fit::{gp_fit, FitOptions, MeanKind, NoiseSpec};
use super::kernel::KernelKind;
use super::model::{GpError, GpModel};
use crate::core::split_seed;

/// Independent per-output GPs emulating a vector-valued map.
///
/// Outputs are modelled independently; cross-output correlation is out of
/// scope for this toolkit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiOutputGp {
    pub models: Vec<GpModel>,
}

impl MultiOutputGp {
    pub fn fit(
        x: &[Vec<f64>],
        y_rows: &[Vec<f64>],
        kind: KernelKind,
        mean: MeanKind,
        noise: NoiseSpec,
        opts: &FitOptions,
    ) -> Result<Self, GpError> {
        if x.len() != y_rows.len() {
            return Err(GpError::Invalid(format!(
                "{} inputs vs {} output rows",
                x.len(),
                y_rows.len()
            )));
        }
        let m = y_rows.first().map_or(0, |r| r.len());
        if m == 0 {
            return Err(GpError::Invalid("no outputs to emulate".into()));
        }
        let models = (0..m)
            .map(|j| {
                let col: Vec<f64> = y_rows.iter().map(|r| r[j]).collect();
                gp_fit(
                    x,
                    &col,
                    kind,
                    mean,
                    noise,
                    &FitOptions {
                        seed: split_seed(opts.seed, j as u64),
                        ..opts.clone()
                    },
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { models })
    }

    pub fn output_dim(&self) -> usize {
        self.models.len()
    }

    pub fn n_train(&self) -> usize {
        self.models.first().map_or(0, |m| m.n_train())
    }

    /// Per-output predictive means and variances at one input.
    pub fn predict(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut means = Vec::with_capacity(self.models.len());
        let mut vars = Vec::with_capacity(self.models.len());
        for m in &self.models {
            let (mu, v) = m.predict(x);
            means.push(mu);
            vars.push(v);
        }
        (means, vars)
    }
}
