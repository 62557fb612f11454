//! Gaussian-process regression.
//!
//! Used three ways across the toolkit: as a discrepancy model over an
//! observation index (e.g. space), as a surrogate emulator of the simulator
//! trained on an ensemble of runs, and as a surrogate of score surfaces for
//! refinement. Hyperparameters are point estimates from the log marginal
//! likelihood (empirical Bayes); uncertainty in them is ignored, which the
//! fitting routine surfaces via a log message.

mod fit;
mod kernel;
mod model;
mod multi;

pub use fit::{gp_fit, log_marginal_and_grad, FitOptions, MeanKind, NoiseSpec};
pub use kernel::{Kernel, KernelKind};
pub use model::{GpError, GpModel, LooPoint, MeanFn, Transform};
pub use multi::MultiOutputGp;
