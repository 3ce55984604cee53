//! Marginal semi-modular inference.
//!
//! The semi-modular target for phi interpolates between the cut marginal
//! and the full generalized-posterior marginal through an influence
//! parameter `gamma` in [0, 1]:
//!
//! ```text
//! log target(phi) = log cut_marginal(phi) + gamma * log mhat(phi)
//! ```
//!
//! where `mhat(phi)` estimates the conditional evidence of the second
//! module, `integral pi(eta|phi) exp(nu' M(eta, phi)) d eta`. The evidence
//! is estimated by the plug-in-normal identity at a single evaluation
//! point:
//!
//! ```text
//! ln mhat = ln pi(eta*|phi) + nu' M(eta*, phi) - ln q(eta*)
//! ```
//!
//! with `q` the conditional normal approximation at phi. The identity is
//! exact when the conditional is truly Gaussian with a flat prior and is a
//! Laplace-type approximation otherwise. At `gamma = 0` the evidence term
//! is skipped entirely, so the chain targets the cut marginal; at
//! `gamma = 1` it targets the full marginal (exactly when the identity is
//! exact). Draws of eta are attached to the retained phi draws the same
//! way the cut sampler does it.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::laplace;
use crate::model::{SampleSet, SampleSource, TwoModuleSystem};
use crate::optim;
use crate::samplers::cut::{assemble, attach_eta_stage, reserve_size};
use crate::samplers::{rwm_chain, CutStrategy, McmcConfig};
use crate::seeding::{substream, Domain};

/// Plug-in estimate of the log conditional evidence of the second module at
/// `phi`, evaluated at `eta_star` (defaults to the conditional mode).
pub fn chib_log_mhat(
    sys: &TwoModuleSystem,
    phi: &[f64],
    eta_star: Option<&[f64]>,
) -> Result<f64> {
    chib_with_init(sys, phi, eta_star, None).map(|(v, _)| v)
}

/// As [`chib_log_mhat`], but reusing `init` to warm-start the inner solve
/// and returning the solved mode for the next warm start.
fn chib_with_init(
    sys: &TwoModuleSystem,
    phi: &[f64],
    eta_star: Option<&[f64]>,
    init: Option<&DVector<f64>>,
) -> Result<(f64, DVector<f64>)> {
    let solve = optim::solve_conditional_mode(sys, phi, init)?;
    if !solve.converged {
        return Err(Error::SolverFailure {
            iterations: solve.iterations,
            grad_norm: solve.grad_norm,
        });
    }
    let cond = laplace::conditional_from_solve(sys, solve)?;
    let mode = cond.mean().clone();
    let star: Vec<f64> = match eta_star {
        Some(v) => {
            if v.len() != sys.d_eta() {
                return Err(Error::invalid("eta_star length does not match d_eta"));
            }
            v.to_vec()
        }
        None => mode.as_slice().to_vec(),
    };
    let numerator = sys.log_conditional_eta(&star, phi)?;
    if numerator == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "eta_star has zero conditional density; pick a point inside the support",
        ));
    }
    let star = DVector::from_vec(star);
    Ok((numerator - cond.log_pdf(&star), mode))
}

/// The semi-modular log target for phi (no caching).
pub fn log_smi_target(
    sys: &TwoModuleSystem,
    phi: &[f64],
    gamma: f64,
    eta_star: Option<&[f64]>,
) -> Result<f64> {
    validate_gamma(gamma)?;
    let cut = sys.log_cut_marginal_phi(phi)?;
    if cut == f64::NEG_INFINITY || gamma == 0.0 {
        return Ok(cut);
    }
    Ok(cut + gamma * chib_log_mhat(sys, phi, eta_star)?)
}

fn validate_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must lie in [0, 1]"));
    }
    Ok(())
}

/// Settings for [`sample_smi`].
#[derive(Debug, Clone)]
pub struct SmiConfig {
    /// Influence of the second module on phi, in [0, 1].
    pub gamma: f64,
    /// Number of retained draws.
    pub n_draws: usize,
    /// Chain settings for the phi stage; the chain length is derived from
    /// `burn_in`, `thin`, and `n_draws`.
    pub mcmc: McmcConfig,
    /// How eta is attached to retained phi draws.
    pub eta: CutStrategy,
    /// Fixed evaluation point for the evidence identity (defaults to the
    /// conditional mode at each phi).
    pub eta_star: Option<Vec<f64>>,
}

impl SmiConfig {
    pub fn new(gamma: f64, n_draws: usize, mcmc: McmcConfig) -> Self {
        Self { gamma, n_draws, mcmc, eta: CutStrategy::default(), eta_star: None }
    }
}

/// Memoizes the evidence term by the exact bits of phi and carries the
/// warm-start mode between evaluations. The chain is sequential, so a
/// RefCell suffices.
struct EvidenceCache {
    values: HashMap<Vec<u64>, f64>,
    warm: Option<DVector<f64>>,
}

const EVIDENCE_CACHE_CAP: usize = 8192;

impl EvidenceCache {
    fn new() -> Self {
        Self { values: HashMap::new(), warm: None }
    }

    fn key(phi: &[f64]) -> Vec<u64> {
        phi.iter().map(|v| v.to_bits()).collect()
    }

    fn get_or_compute(
        &mut self,
        sys: &TwoModuleSystem,
        phi: &[f64],
        eta_star: Option<&[f64]>,
    ) -> Result<f64> {
        let key = Self::key(phi);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let (value, mode) = chib_with_init(sys, phi, eta_star, self.warm.as_ref())?;
        self.warm = Some(mode);
        if self.values.len() >= EVIDENCE_CACHE_CAP {
            self.values.clear();
        }
        self.values.insert(key, value);
        Ok(value)
    }
}

/// Draw from the marginal semi-modular posterior: a Metropolis chain on the
/// phi target followed by per-draw conditional eta attachment.
pub fn sample_smi(sys: &TwoModuleSystem, config: &SmiConfig) -> Result<SampleSet> {
    validate_gamma(config.gamma)?;
    if config.n_draws == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    let s = config.n_draws;
    let total = s + reserve_size(s);
    let mc = McmcConfig {
        steps: config.mcmc.burn_in + config.mcmc.thin * total,
        ..config.mcmc.clone()
    };
    let init = sys
        .phi_init()
        .cloned()
        .ok_or_else(|| Error::invalid("the semi-modular chain needs a phi starting point"))?;

    let cache = RefCell::new(EvidenceCache::new());
    let gamma = config.gamma;
    let eta_star = config.eta_star.as_deref();
    let target = |phi: &[f64]| -> Result<f64> {
        let cut = sys.log_cut_marginal_phi(phi)?;
        if cut == f64::NEG_INFINITY || gamma == 0.0 {
            return Ok(cut);
        }
        let evidence = cache.borrow_mut().get_or_compute(sys, phi, eta_star)?;
        Ok(cut + gamma * evidence)
    };

    let mut rng = substream(mc.seed, Domain::SmiChain, 0);
    let res = rwm_chain(target, &init, &mc, &mut rng)?;
    debug_assert_eq!(res.samples.len(), total);

    let attached = attach_eta_stage(sys, &config.eta, mc.seed, &res.samples, s)?;
    let mut set = assemble(sys, &attached, SampleSource::SemiModular)?;
    set.set_meta("seed", mc.seed.to_string());
    set.set_meta("gamma", format!("{gamma}"));
    set.set_meta("phi_acceptance_rate", format!("{:.4}", res.acceptance_rate));
    for w in res.warnings {
        set.set_meta("warning", w);
    }
    Ok(set)
}
