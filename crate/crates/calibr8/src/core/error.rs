use thiserror::Error;

/// Errors raised by simulator evaluation.
#[derive(Debug, Clone, Error)]
pub enum SimulatorError {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite simulator output at x = {x:?}")]
    NonFinite { x: Vec<f64> },
    #[error("simulator evaluation budget exhausted")]
    BudgetExhausted,
    #[error("subprocess simulator failed: {0}")]
    Subprocess(String),
}

/// Errors raised by the core module.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("input {x:?} outside parameter space bounds")]
    OutOfBounds { x: Vec<f64> },
    #[error("evaluation failed at design point {index}: {source}")]
    Evaluation {
        index: usize,
        source: SimulatorError,
    },
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
}
