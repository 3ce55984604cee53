//! Model layer: named parameter vectors, observation tables, priors,
//! per-observation losses, and the two-module system that ties them together
//! and exposes the three log-density kernels everything else consumes.

mod loss;
mod obs;
mod param;
mod prior;
mod sample_set;
mod system;

pub use loss::{EtaLoss, PhiLoss};
pub use obs::ObsTable;
pub use param::ParamVector;
pub use prior::{EtaPrior, Flat, IndependentNormal, PhiPrior, PositiveReciprocal, UnitCube};
pub use sample_set::{SampleSet, SampleSource};
pub use system::{Module1, Module2, PhiDirectSampler, SystemBuilder, TwoModuleSystem};
