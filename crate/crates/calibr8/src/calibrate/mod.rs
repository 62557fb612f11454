//! Calibration engines: point estimation, Metropolis-Hastings, ABC, tempered
//! and ABC-tolerance SMC, history matching, ensemble Kalman inversion,
//! mean-field variational inference, and surrogate-accelerated MH.
//!
//! Engines that drive their own simulations are embarrassingly parallel with
//! per-index split seeds, so results never depend on thread count. Every
//! engine accounts for the objective evaluations it spends and truncates
//! gracefully (returning partial results flagged `partial`) when given an
//! evaluation budget.

mod abc;
mod chain;
mod eki;
mod hm;
mod mh;
mod mle;
mod particle;
mod smc;
mod surrogate;
mod vi;

pub use abc::{abc_rejection, AbcConfig};
pub use chain::{split_rhat, Chain};
pub use eki::{eki, EkiConfig, GaussianApprox};
pub use hm::{history_match, HmCandidates, HmConfig, HmPredictor, NroyReport};
pub use mh::{metropolis_hastings, MhConfig};
pub use mle::{mle, MleConfig, MleResult};
pub use particle::{ParticleMeta, ParticleSet};
pub use smc::{smc, SmcConfig, SmcTarget};
pub use surrogate::{surrogate_mh, SurrogateMhConfig, SurrogateMhResult};
pub use vi::{meanfield_vi, StepSchedule, VariationalParams, ViConfig, ViResult, ViTarget};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("particle degeneracy: {0}")]
    Degeneracy(String),
    #[error("conditioning error: {0}")]
    Conditioning(String),
    #[error(transparent)]
    Score(#[from] crate::scores::ScoreError),
    #[error(transparent)]
    Observation(#[from] crate::observation::ObservationError),
    #[error(transparent)]
    Gp(#[from] crate::gp::GpError),
    #[error(transparent)]
    Core(#[from] crate::core::CoreError),
}

/// Objective evaluated at a parameter point; the seed drives any stochastic
/// simulation inside.
pub type Objective<'a> = &'a (dyn Fn(&[f64], u64) -> Result<f64, CalibrateError> + Sync);
