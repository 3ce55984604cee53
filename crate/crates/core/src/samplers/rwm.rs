//! Random-walk Metropolis with burn-in-only adaptation.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Proposal step sizes for the random walk.
#[derive(Debug, Clone)]
pub enum ProposalScale {
    /// One step size shared by every coordinate.
    Scalar(f64),
    /// One step size per coordinate.
    PerCoordinate(Vec<f64>),
}

impl ProposalScale {
    fn to_vec(&self, dim: usize) -> Result<Vec<f64>> {
        let v = match self {
            ProposalScale::Scalar(s) => vec![*s; dim],
            ProposalScale::PerCoordinate(v) => v.clone(),
        };
        if v.len() != dim {
            return Err(Error::invalid("proposal scale length does not match the dimension"));
        }
        if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("proposal scales must be positive and finite"));
        }
        Ok(v)
    }
}

/// Chain settings. `steps` counts every iteration including burn-in; the
/// retained draws are every `thin`-th post-burn-in state.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub proposal_scale: ProposalScale,
    pub seed: u64,
    /// Adapt the step sizes during burn-in (a global multiplier chasing a
    /// 0.234 acceptance rate, plus per-coordinate spread estimates midway
    /// through burn-in). Adaptation stops at the end of burn-in, so the
    /// retained chain is a proper Metropolis chain.
    pub adapt: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            steps: 6000,
            burn_in: 1000,
            thin: 5,
            proposal_scale: ProposalScale::Scalar(0.1),
            seed: 0,
            adapt: true,
        }
    }
}

/// A finished chain: retained states, their log-target values, and
/// acceptance bookkeeping.
#[derive(Debug, Clone)]
pub struct RwmResult {
    pub samples: Vec<DVector<f64>>,
    pub log_values: Vec<f64>,
    /// Acceptance rate over the post-burn-in phase.
    pub acceptance_rate: f64,
    /// Step sizes in effect after adaptation.
    pub final_scales: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Run a random-walk Metropolis chain on an unnormalized log target.
///
/// The target may return `-inf` (rejected region); a non-finite value of any
/// other kind surfaces as an error. The caller supplies the generator, which
/// fixes the chain's randomness entirely.
pub fn rwm_chain<F>(
    log_target: F,
    init: &DVector<f64>,
    config: &McmcConfig,
    rng: &mut ChaCha12Rng,
) -> Result<RwmResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let dim = init.len();
    if dim == 0 {
        return Err(Error::invalid("cannot run a chain on an empty state"));
    }
    if config.thin == 0 {
        return Err(Error::invalid("thinning interval must be at least 1"));
    }
    if config.steps <= config.burn_in {
        return Err(Error::invalid("steps must exceed burn_in"));
    }
    let mut scales = config.proposal_scale.to_vec(dim)?;
    let mut x = init.clone();
    let mut lx = log_target(x.as_slice())?;
    if !lx.is_finite() {
        return Err(Error::invalid("chain start has zero target density"));
    }

    let retained_len = (config.steps - config.burn_in) / config.thin;
    let mut samples = Vec::with_capacity(retained_len);
    let mut log_values = Vec::with_capacity(retained_len);
    let mut warnings = Vec::new();

    // Burn-in adaptation state.
    let mut log_mult = 0.0f64;
    let mut burn_states: Vec<DVector<f64>> = Vec::new();
    let half_burn = config.burn_in / 2;

    let mut accepted_post = 0usize;
    let mut proposed_post = 0usize;
    let mut proposal = DVector::zeros(dim);

    for t in 0..config.steps {
        let mult = log_mult.exp();
        for k in 0..dim {
            let step: f64 = rng.sample(StandardNormal);
            proposal[k] = x[k] + scales[k] * mult * step;
        }
        let lp = log_target(proposal.as_slice())?;
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::PathologicalEval { context: "chain target".to_string(), value: lp });
        }
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = lp > f64::NEG_INFINITY && log_u < lp - lx;
        if accept {
            x.copy_from(&proposal);
            lx = lp;
        }

        if t < config.burn_in {
            if config.adapt {
                // Robbins-Monro drift of the global multiplier toward the
                // standard random-walk target rate.
                let gamma = (t as f64 + 1.0).powf(-0.6);
                let a = if accept { 1.0 } else { 0.0 };
                log_mult += gamma * (a - 0.234);
                if t < half_burn {
                    burn_states.push(x.clone());
                } else if t == half_burn && half_burn > 16 {
                    // Re-scale coordinates by their observed spread so far.
                    let m = burn_states.len() as f64;
                    for k in 0..dim {
                        let mean = burn_states.iter().map(|s| s[k]).sum::<f64>() / m;
                        let var = burn_states.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>()
                            / (m - 1.0);
                        let sd = var.sqrt();
                        if sd.is_finite() && sd > 0.0 {
                            scales[k] = sd;
                        }
                    }
                    burn_states.clear();
                }
            }
        } else {
            proposed_post += 1;
            if accept {
                accepted_post += 1;
            }
            if (t - config.burn_in) % config.thin == config.thin - 1 {
                samples.push(x.clone());
                log_values.push(lx);
            }
        }
    }

    if samples.is_empty() {
        return Err(Error::invalid("chain retained no draws; increase steps or reduce thinning"));
    }
    let acceptance_rate = if proposed_post > 0 {
        accepted_post as f64 / proposed_post as f64
    } else {
        0.0
    };
    if acceptance_rate == 0.0 {
        warnings.push("no proposals were accepted after burn-in".to_string());
    }
    let mult = log_mult.exp();
    let final_scales: Vec<f64> = scales.iter().map(|s| s * mult).collect();
    Ok(RwmResult { samples, log_values, acceptance_rate, final_scales, warnings })
}
