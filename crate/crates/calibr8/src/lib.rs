//! Calibration toolkit for black-box computer simulators.
//!
//! The toolkit treats a simulator as a map `f(x, u, seed)` from calibration
//! parameters `x`, control inputs `u`, and (for stochastic codes) a seed to an
//! output vector. Given observational data `y` and a statistical observation
//! model linking `y` to the best simulator prediction, the engines in
//! [`calibrate`] produce point estimates, posterior samples, or not-ruled-out
//! regions for `x`, optionally accelerated by the Gaussian-process surrogates
//! in [`gp`]. [`predict`] propagates the calibrated parameters forward to new
//! control inputs and validates against held-out data.
//!
//! Everything is seed-deterministic: every randomized operation derives
//! per-task seeds from a master seed with a splittable counter scheme, so
//! results do not depend on thread count or dispatch order.

pub mod calibrate;
pub mod core;
pub mod gp;
pub mod io;
pub mod observation;
mod optim;
pub mod predict;
pub mod scores;
pub mod testbed;

pub use crate::core::{
    build_design, evaluate, run_ensemble, BlackBoxSimulator, ControlInput, DesignMethod, Ensemble,
    FnSimulator, ParamDim, ParameterSpace, PriorSpec, Simulator,
};
