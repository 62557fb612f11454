use serde::{Deserialize, Serialize};

use super::ObservationError;

/// Summary statistic `T` mapping an n-vector to a k-vector, `k <= n`.
///
/// Comparing `T(g(f(x)))` with `T(y)` instead of the raw outputs trades
/// statistical efficiency for robustness to misspecification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SummaryStatistic {
    Identity,
    Mean,
    /// Population variance (divides by n).
    Variance,
    Quantiles { probs: Vec<f64> },
    /// `offset + matrix . v` with a declared input length.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

/// Type-7 quantile (linear interpolation of order statistics).
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi.min(n - 1)] - sorted[lo])
}

impl SummaryStatistic {
    pub fn validate(&self) -> Result<(), ObservationError> {
        match self {
            SummaryStatistic::Quantiles { probs } => {
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(ObservationError::Config(
                        "quantile probabilities must lie in [0, 1]".into(),
                    ));
                }
                Ok(())
            }
            SummaryStatistic::Affine { matrix, offset } => {
                if matrix.len() != offset.len() {
                    return Err(ObservationError::Config(format!(
                        "affine summary: {} rows vs offset length {}",
                        matrix.len(),
                        offset.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        match self {
            SummaryStatistic::Identity => input_len,
            SummaryStatistic::Mean | SummaryStatistic::Variance => 1,
            SummaryStatistic::Quantiles { probs } => probs.len(),
            SummaryStatistic::Affine { matrix, .. } => matrix.len(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, ObservationError> {
        if v.is_empty() {
            return Err(ObservationError::Config("summary of empty vector".into()));
        }
        match self {
            SummaryStatistic::Identity => Ok(v.to_vec()),
            SummaryStatistic::Mean => Ok(vec![v.iter().sum::<f64>() / v.len() as f64]),
            SummaryStatistic::Variance => {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                Ok(vec![
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64,
                ])
            }
            SummaryStatistic::Quantiles { probs } => {
                let mut sorted = v.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
                Ok(probs.iter().map(|&p| quantile(&sorted, p)).collect())
            }
            SummaryStatistic::Affine { matrix, offset } => {
                for row in matrix {
                    if row.len() != v.len() {
                        return Err(ObservationError::Config(format!(
                            "affine summary declared input length {}, got {}",
                            row.len(),
                            v.len()
                        )));
                    }
                }
                Ok(matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, o)| o + row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                    .collect())
            }
        }
    }
}

/// Apply a summary statistic to a vector.
pub fn summarize(t: &SummaryStatistic, v: &[f64]) -> Result<Vec<f64>, ObservationError> {
    t.apply(v)
}
