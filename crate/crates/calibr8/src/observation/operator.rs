use serde::{Deserialize, Serialize};

use super::ObservationError;

/// One component `g_i`: a map from the simulator output vector to one real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorComponent {
    /// Select output `index`.
    Select { index: usize },
    /// Mean of the contiguous window `[start, end)`.
    MeanWindow { start: usize, end: usize },
    /// Sum of the contiguous window `[start, end)`.
    SumWindow { start: usize, end: usize },
    /// `offset + weights . f_out`.
    Affine { weights: Vec<f64>, offset: f64 },
}

impl OperatorComponent {
    fn apply(&self, f_out: &[f64]) -> Result<f64, ObservationError> {
        match self {
            OperatorComponent::Select { index } => {
                f_out.get(*index).copied().ok_or_else(|| {
                    ObservationError::Config(format!(
                        "index-select {index} out of range for output of length {}",
                        f_out.len()
                    ))
                })
            }
            OperatorComponent::MeanWindow { start, end } | OperatorComponent::SumWindow { start, end } => {
                if *start >= *end || *end > f_out.len() {
                    return Err(ObservationError::Config(format!(
                        "window [{start}, {end}) invalid for output of length {}",
                        f_out.len()
                    )));
                }
                let sum: f64 = f_out[*start..*end].iter().sum();
                Ok(match self {
                    OperatorComponent::MeanWindow { .. } => sum / (end - start) as f64,
                    _ => sum,
                })
            }
            OperatorComponent::Affine { weights, offset } => {
                if weights.len() != f_out.len() {
                    return Err(ObservationError::Config(format!(
                        "affine weights length {} vs output length {}",
                        weights.len(),
                        f_out.len()
                    )));
                }
                Ok(offset + weights.iter().zip(f_out).map(|(w, v)| w * v).sum::<f64>())
            }
        }
    }
}

/// Observation operator `g`: one component per observed quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOperator {
    pub components: Vec<OperatorComponent>,
}

impl ObservationOperator {
    pub fn new(components: Vec<OperatorComponent>) -> Self {
        Self { components }
    }

    /// Identity operator on an `n`-dimensional output.
    pub fn identity(n: usize) -> Self {
        Self {
            components: (0..n)
                .map(|index| OperatorComponent::Select { index })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn apply(&self, f_out: &[f64]) -> Result<Vec<f64>, ObservationError> {
        self.components.iter().map(|c| c.apply(f_out)).collect()
    }
}

/// Map raw simulator output into observation space.
pub fn apply_operator(
    g: &ObservationOperator,
    f_out: &[f64],
) -> Result<Vec<f64>, ObservationError> {
    g.apply(f_out)
}
