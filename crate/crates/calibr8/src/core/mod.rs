//! Parameter spaces, simulator abstraction, seeded evaluation, and ensembles.

mod design;
mod ensemble;
mod error;
mod seed;
mod simulator;
mod space;
mod subprocess;

pub use design::{build_design, DesignMethod};
pub use ensemble::{run_ensemble, Ensemble, ErrorPolicy, Provenance};
pub use error::{CoreError, SimulatorError};
pub use seed::{rng_from, split_seed};
pub use simulator::{
    deterministic_fn, evaluate, BlackBoxSimulator, FnSimulator, MeteredSimulator, Simulator,
};
pub use space::{ControlInput, ParamDim, ParameterSpace, PriorSpec};
pub use subprocess::SubprocessSimulator;
