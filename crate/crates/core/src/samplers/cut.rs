//! The sequential cut sampler.
//!
//! Stage one draws `phi` from the cut marginal (an exact conjugate sampler
//! when the system registers one, otherwise a Metropolis chain that only
//! ever evaluates the first module). Stage two attaches, independently for
//! each retained `phi`, one draw of `eta` from the conditional
//! `pi(eta | w, phi)`.
//!
//! Every stage-two slot gets its own deterministic random substream keyed by
//! `(seed, stage, slot)`, so results do not depend on thread scheduling and
//! the `phi` column is bit-identical across systems that share a first
//! module. When a slot's conditional draw fails for a numerical reason, the
//! slot is refilled from a small reserve of extra `phi` draws; more than 5%
//! failures abort the run.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dist::MvStudentT;
use crate::error::{Error, Result};
use crate::laplace;
use crate::model::{SampleSet, SampleSource, TwoModuleSystem};
use crate::samplers::rwm::{rwm_chain, McmcConfig, ProposalScale};
use crate::samplers::sir::{effective_sample_size, sir_indices};
use crate::seeding::{substream, Domain};

/// How stage two draws `eta` at a fixed `phi`.
#[derive(Debug, Clone)]
pub enum CutStrategy {
    /// A fresh short Metropolis chain per slot; keeps the final state.
    NestedMcmc { steps: usize, burn_in: usize },
    /// One draw from the plug-in conditional normal.
    ConditionalNormal,
    /// Sampling importance resampling with a multivariate t proposal built
    /// on the plug-in normal (heavier tails guard the weights).
    SirTProposal { proposals: usize, dof: f64 },
}

impl Default for CutStrategy {
    fn default() -> Self {
        CutStrategy::NestedMcmc { steps: 500, burn_in: 200 }
    }
}

impl CutStrategy {
    fn describe(&self) -> String {
        match self {
            CutStrategy::NestedMcmc { steps, burn_in } => {
                format!("nested_mcmc(steps={steps},burn_in={burn_in})")
            }
            CutStrategy::ConditionalNormal => "conditional_normal".to_string(),
            CutStrategy::SirTProposal { proposals, dof } => {
                format!("sir_t(proposals={proposals},dof={dof})")
            }
        }
    }
}

/// Settings for [`sample_cut`].
#[derive(Debug, Clone)]
pub struct CutConfig {
    /// Number of retained draws.
    pub n_draws: usize,
    pub seed: u64,
    pub strategy: CutStrategy,
    /// Chain settings for stage one when the system has no exact sampler
    /// for the cut marginal. `steps` is ignored; the chain length is derived
    /// from `burn_in`, `thin`, and the number of draws needed.
    pub phi_mcmc: Option<McmcConfig>,
}

impl CutConfig {
    pub fn new(n_draws: usize, seed: u64) -> Self {
        Self { n_draws, seed, strategy: CutStrategy::default(), phi_mcmc: None }
    }

    pub fn with_strategy(mut self, strategy: CutStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

/// Extra phi draws kept aside for refilling failed stage-two slots: 5% of
/// the requested draws, rounded up.
pub(crate) fn reserve_size(s: usize) -> usize {
    ((s as f64) * 0.05).ceil() as usize
}

pub(crate) enum SlotError {
    /// Worth retrying with a different phi.
    Recoverable,
    Fatal(Error),
}

fn classify(e: Error) -> SlotError {
    match e {
        Error::SolverFailure { .. }
        | Error::IndefiniteHessian { .. }
        | Error::SingularMatrix { .. }
        | Error::DegenerateWeights => SlotError::Recoverable,
        other => SlotError::Fatal(other),
    }
}

/// Per-slot diagnostic emitted by stage two (acceptance rate for nested
/// chains, effective sample size for importance resampling).
pub(crate) struct SlotDraw {
    pub(crate) eta: DVector<f64>,
    pub(crate) diag: Option<f64>,
}

pub(crate) fn eta_for_slot(
    sys: &TwoModuleSystem,
    strategy: &CutStrategy,
    seed: u64,
    slot: u64,
    phi: &DVector<f64>,
) -> std::result::Result<SlotDraw, SlotError> {
    let mut rng = substream(seed, Domain::EtaStage, slot);
    match strategy {
        CutStrategy::ConditionalNormal => {
            let cond = laplace::conditional_laplace(sys, phi.as_slice(), None).map_err(classify)?;
            Ok(SlotDraw { eta: cond.sample(&mut rng), diag: None })
        }
        CutStrategy::SirTProposal { proposals, dof } => {
            let cond = laplace::conditional_laplace(sys, phi.as_slice(), None).map_err(classify)?;
            let proposal =
                MvStudentT::new(cond.mean().clone(), cond.covariance(), *dof).map_err(classify)?;
            let mut candidates = Vec::with_capacity(*proposals);
            let mut log_w = Vec::with_capacity(*proposals);
            for _ in 0..*proposals {
                let cand = proposal.sample(&mut rng);
                let target = sys
                    .log_conditional_eta(cand.as_slice(), phi.as_slice())
                    .map_err(SlotError::Fatal)?;
                let lw = if target == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    target - proposal.log_pdf(&cand)
                };
                log_w.push(lw);
                candidates.push(cand);
            }
            let ess = effective_sample_size(&log_w);
            let idx = sir_indices(&log_w, 1, &mut rng).map_err(classify)?;
            Ok(SlotDraw { eta: candidates[idx[0]].clone(), diag: Some(ess) })
        }
        CutStrategy::NestedMcmc { steps, burn_in } => {
            let anchor = sys.eta_start(phi.as_slice());
            let at_anchor = sys
                .log_conditional_eta(anchor.as_slice(), phi.as_slice())
                .map_err(SlotError::Fatal)?;
            if at_anchor == f64::NEG_INFINITY {
                return Err(SlotError::Recoverable);
            }
            let config = McmcConfig {
                steps: *steps,
                burn_in: *burn_in,
                // Retain exactly the final state.
                thin: steps.saturating_sub(*burn_in).max(1),
                proposal_scale: ProposalScale::Scalar(0.5),
                seed,
                adapt: true,
            };
            let res = rwm_chain(
                |e| sys.log_conditional_eta(e, phi.as_slice()),
                &anchor,
                &config,
                &mut rng,
            )
            .map_err(classify)?;
            let eta = res.samples.last().expect("chain retains at least one state").clone();
            Ok(SlotDraw { eta, diag: Some(res.acceptance_rate) })
        }
    }
}

/// Draw from the cut posterior by the two-stage scheme described in the
/// module docs. The output columns are the phi block then the eta block.
pub fn sample_cut(sys: &TwoModuleSystem, config: &CutConfig) -> Result<SampleSet> {
    let s = config.n_draws;
    if s == 0 {
        return Err(Error::invalid("n_draws must be at least 1"));
    }
    match &config.strategy {
        CutStrategy::SirTProposal { proposals, dof } => {
            if *proposals == 0 {
                return Err(Error::invalid("the importance stage needs at least one proposal"));
            }
            if !(*dof > 2.0) {
                return Err(Error::invalid(
                    "the t proposal needs dof > 2 so its covariance exists",
                ));
            }
        }
        CutStrategy::NestedMcmc { steps, burn_in } => {
            if steps <= burn_in {
                return Err(Error::invalid("nested chain steps must exceed burn_in"));
            }
        }
        CutStrategy::ConditionalNormal => {}
    }

    // Reserve pool for refilling slots whose conditional draw fails.
    let total = s + reserve_size(s);

    // Stage one.
    let phis: Vec<DVector<f64>> = if let Some(sampler) = sys.phi_sampler() {
        (0..total)
            .map(|slot| {
                let mut rng = substream(config.seed, Domain::PhiStage, slot as u64);
                sampler.sample(sys.nu(), &mut rng)
            })
            .collect()
    } else {
        let base = config.phi_mcmc.clone().unwrap_or_default();
        let mc = McmcConfig {
            steps: base.burn_in + base.thin * total,
            ..base
        };
        let init = sys
            .phi_init()
            .cloned()
            .ok_or_else(|| Error::invalid("stage one needs a phi starting point or an exact sampler"))?;
        let mut rng = substream(config.seed, Domain::PhiStage, 0);
        let res = rwm_chain(|p| sys.log_cut_marginal_phi(p), &init, &mc, &mut rng)?;
        res.samples
    };
    debug_assert_eq!(phis.len(), total);

    let attached = attach_eta_stage(sys, &config.strategy, config.seed, &phis, s)?;
    let mut set = assemble(sys, &attached, SampleSource::Cut)?;
    set.set_meta("seed", config.seed.to_string());
    set.set_meta("strategy", config.strategy.describe());
    Ok(set)
}

/// The filled stage-two slots plus aggregate diagnostics.
pub(crate) struct AttachedRows {
    pub(crate) rows: Vec<(DVector<f64>, DVector<f64>)>,
    pub(crate) n_failures: usize,
    pub(crate) diag: Option<(&'static str, f64)>,
}

/// Attach one conditional eta draw to each of the first `s` entries of
/// `phis`, in parallel; failed slots are refilled sequentially from the
/// remaining entries. Slot randomness is keyed by `(seed, slot)`, so the
/// output is independent of thread scheduling.
pub(crate) fn attach_eta_stage(
    sys: &TwoModuleSystem,
    strategy: &CutStrategy,
    seed: u64,
    phis: &[DVector<f64>],
    s: usize,
) -> Result<AttachedRows> {
    let total = phis.len();
    let primary: Vec<std::result::Result<SlotDraw, SlotError>> = (0..s)
        .into_par_iter()
        .map(|slot| eta_for_slot(sys, strategy, seed, slot as u64, &phis[slot]))
        .collect();

    let mut slots: Vec<Option<(DVector<f64>, SlotDraw)>> = Vec::with_capacity(s);
    let mut failed_slots = Vec::new();
    for (slot, res) in primary.into_iter().enumerate() {
        match res {
            Ok(draw) => slots.push(Some((phis[slot].clone(), draw))),
            Err(SlotError::Fatal(e)) => return Err(e),
            Err(SlotError::Recoverable) => {
                failed_slots.push(slot);
                slots.push(None);
            }
        }
    }

    // Refill failures from the reserve, deterministically by slot order.
    let n_failures = failed_slots.len();
    let mut next_reserve = s;
    for slot in failed_slots {
        loop {
            if next_reserve >= total {
                return Err(Error::TooManyInnerFailures { failed: n_failures, total: s });
            }
            let r = next_reserve;
            next_reserve += 1;
            match eta_for_slot(sys, strategy, seed, r as u64, &phis[r]) {
                Ok(draw) => {
                    slots[slot] = Some((phis[r].clone(), draw));
                    break;
                }
                Err(SlotError::Fatal(e)) => return Err(e),
                Err(SlotError::Recoverable) => continue,
            }
        }
    }

    let mut diag_sum = 0.0;
    let mut diag_count = 0usize;
    let rows = slots
        .into_iter()
        .map(|entry| {
            let (phi, slot_draw) = entry.expect("all slots filled or the run aborted");
            if let Some(v) = slot_draw.diag {
                diag_sum += v;
                diag_count += 1;
            }
            (phi, slot_draw.eta)
        })
        .collect();
    let diag = if diag_count > 0 {
        let key = match strategy {
            CutStrategy::NestedMcmc { .. } => "mean_inner_acceptance",
            CutStrategy::SirTProposal { .. } => "mean_inner_ess",
            CutStrategy::ConditionalNormal => "inner_diag",
        };
        Some((key, diag_sum / diag_count as f64))
    } else {
        None
    };
    Ok(AttachedRows { rows, n_failures, diag })
}

/// Build the labeled sample matrix (phi block then eta block) from filled
/// slots.
pub(crate) fn assemble(
    sys: &TwoModuleSystem,
    attached: &AttachedRows,
    source: SampleSource,
) -> Result<SampleSet> {
    let s = attached.rows.len();
    let d_phi = sys.d_phi();
    let d = d_phi + sys.d_eta();
    let mut draws = nalgebra::DMatrix::zeros(s, d);
    for (i, (phi, eta)) in attached.rows.iter().enumerate() {
        for j in 0..d_phi {
            draws[(i, j)] = phi[j];
        }
        for j in 0..sys.d_eta() {
            draws[(i, d_phi + j)] = eta[j];
        }
    }
    let mut set = SampleSet::new(sys.joint_names(), draws, source)?;
    set.set_meta("inner_failures", attached.n_failures.to_string());
    if let Some((key, value)) = attached.diag {
        set.set_meta(key, format!("{value:.4}"));
    }
    Ok(set)
}
