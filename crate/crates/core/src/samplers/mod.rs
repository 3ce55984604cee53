//! Posterior samplers: random-walk Metropolis, sampling importance
//! resampling, the sequential cut sampler, and the full-posterior chain.

pub(crate) mod cut;
mod full;
mod rwm;
mod sir;

pub use cut::{sample_cut, CutConfig, CutStrategy};
pub use full::{sample_full, FullConfig};
pub use rwm::{rwm_chain, McmcConfig, ProposalScale, RwmResult};
pub use sir::{effective_sample_size, sir_indices};
