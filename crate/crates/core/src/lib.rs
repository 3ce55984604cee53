//! Generalized Bayesian inference for two-module systems with modular
//! (cut and semi-modular) posteriors.
//!
//! The crate is organized around [`model::TwoModuleSystem`], which couples a
//! first module (data `z`, loss for `phi`) to a second (data `w`, loss for
//! `eta` given `phi`) through learning rates. On top of it sit
//!
//! * [`samplers`]: sequential cut sampling, full-posterior and semi-modular
//!   MCMC, and sampling importance resampling for the inner stage,
//! * [`laplace`]: conditional, marginal, and joint normal approximations,
//! * [`calibration`]: learning-rate selection from curvature and score
//!   covariance, with a grouped bootstrap for degenerate score cases,
//! * [`diagnostics`]: uncertainty-propagation summaries, credible-set Monte
//!   Carlo, and distance measures between posterior approximations,
//! * [`models`]: ready-made systems (an epidemiological dose-response model,
//!   a grouped random-effects model, and a conjugate Gaussian test bench).

pub mod calibration;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod fd;
pub mod laplace;
pub mod linalg;
pub mod model;
pub mod models;
pub mod optim;
pub mod samplers;
pub mod semimodular;

mod seeding;

pub use nalgebra;

pub use error::{Error, Result};
pub use model::{
    EtaLoss, EtaPrior, Module1, Module2, ObsTable, ParamVector, PhiDirectSampler, PhiLoss,
    PhiPrior, SampleSet, SampleSource, SystemBuilder, TwoModuleSystem,
};

/// Crate version as compiled, for embedding in run manifests.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
