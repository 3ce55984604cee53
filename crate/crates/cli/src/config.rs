//! Run configuration: a single TOML file describing one sampling or
//! calibration run.
//!
//! Parsing is strict. Unknown fields are rejected with the offending key in
//! the message, so typos surface as configuration errors instead of being
//! silently ignored. Everything except `model` has a default or is optional;
//! which fields are required depends on the task (for example `samples` is
//! only needed by `diagnose`, and `gamma` is accepted exactly when the task
//! is `smi`).

use std::fmt;
use std::path::{Path, PathBuf};

use gencut_core::models::gauss_chain::GaussChainSettings;
use gencut_core::models::hpv::HpvLoss;
use gencut_core::models::re::ReLoss;
use gencut_core::samplers::{CutStrategy, McmcConfig, ProposalScale};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

/// What a run does. Subcommands map one-to-one onto these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cut,
    Full,
    Smi,
    Calibrate,
    Diagnose,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Cut => "cut",
            Task::Full => "full",
            Task::Smi => "smi",
            Task::Calibrate => "calibrate",
            Task::Diagnose => "diagnose",
        };
        f.write_str(s)
    }
}

/// One run, as described by the configuration file.
///
/// The same file can drive several tasks in sequence (a `cut` run followed
/// by a `diagnose` run pointed at its samples); fields a task does not use
/// are ignored, with the single exception of `gamma`, which is rejected
/// outside `smi` so an interpolation coefficient can never be left behind
/// accidentally.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registered model name (`hpv`, `re`, `gauss-chain`, or a plugin).
    pub model: String,
    /// Optional task pin. When present it must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Primary data file (model-specific column layout).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Second data file, for models whose modules live in separate tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data2: Option<PathBuf>,
    /// Samples CSV from an earlier cut run; consumed by `diagnose`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_draws")]
    pub n_draws: usize,
    /// Semi-modular interpolation coefficient in [0, 1]; `smi` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// First-module learning rate.
    #[serde(default = "default_rate")]
    pub nu: f64,
    /// Second-module learning rate.
    #[serde(default = "default_rate")]
    pub nu_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcToml>,
    /// Settings for the `gauss-chain` model; rejected elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss_chain: Option<GaussChainToml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateToml>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputToml>,
}

fn default_n_draws() -> usize {
    1000
}

fn default_rate() -> f64 {
    1.0
}

/// Loss selection for models that offer more than one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// `poisson` or `quasi` for `hpv`; `gaussian` or `tukey` for `re`.
    pub kind: String,
    /// Overdispersion for the quasi-likelihood loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overdispersion: Option<f64>,
    /// Biweight threshold for the Tukey loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl LossConfig {
    pub fn to_hpv(&self) -> CliResult<HpvLoss> {
        if self.kappa.is_some() {
            return Err(CliError::config("loss.kappa: not a knob of the hpv losses"));
        }
        match self.kind.as_str() {
            "poisson" => {
                if self.overdispersion.is_some() {
                    return Err(CliError::config(
                        "loss.overdispersion: the poisson loss has no overdispersion",
                    ));
                }
                Ok(HpvLoss::Poisson)
            }
            "quasi" => {
                let od = self.overdispersion.ok_or_else(|| {
                    CliError::config("loss.overdispersion: required for the quasi loss")
                })?;
                Ok(HpvLoss::Quasi { overdispersion: od })
            }
            other => Err(CliError::config(format!(
                "loss.kind: unknown hpv loss {other:?}; expected poisson or quasi"
            ))),
        }
    }

    pub fn to_re(&self) -> CliResult<ReLoss> {
        if self.overdispersion.is_some() {
            return Err(CliError::config("loss.overdispersion: not a knob of the re losses"));
        }
        match self.kind.as_str() {
            "gaussian" => {
                if self.kappa.is_some() {
                    return Err(CliError::config("loss.kappa: the gaussian loss has no threshold"));
                }
                Ok(ReLoss::Gaussian)
            }
            "tukey" => {
                let kappa = self
                    .kappa
                    .ok_or_else(|| CliError::config("loss.kappa: required for the tukey loss"))?;
                Ok(ReLoss::Tukey { kappa })
            }
            other => Err(CliError::config(format!(
                "loss.kind: unknown re loss {other:?}; expected gaussian or tukey"
            ))),
        }
    }
}

/// How eta is attached to retained phi draws (cut and smi runs).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// `nested_mcmc`, `conditional_normal`, or `sir_t`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
}

impl StrategyConfig {
    pub fn to_strategy(&self) -> CliResult<CutStrategy> {
        match self.kind.as_str() {
            "nested_mcmc" => {
                if self.proposals.is_some() || self.dof.is_some() {
                    return Err(CliError::config(
                        "strategy: proposals and dof belong to sir_t, not nested_mcmc",
                    ));
                }
                Ok(CutStrategy::NestedMcmc {
                    steps: self.steps.unwrap_or(500),
                    burn_in: self.burn_in.unwrap_or(200),
                })
            }
            "conditional_normal" => {
                if self.steps.is_some()
                    || self.burn_in.is_some()
                    || self.proposals.is_some()
                    || self.dof.is_some()
                {
                    return Err(CliError::config("strategy: conditional_normal takes no knobs"));
                }
                Ok(CutStrategy::ConditionalNormal)
            }
            "sir_t" => {
                if self.steps.is_some() || self.burn_in.is_some() {
                    return Err(CliError::config(
                        "strategy: steps and burn_in belong to nested_mcmc, not sir_t",
                    ));
                }
                Ok(CutStrategy::SirTProposal {
                    proposals: self.proposals.unwrap_or(2048),
                    dof: self.dof.unwrap_or(7.0),
                })
            }
            other => Err(CliError::config(format!(
                "strategy.kind: unknown strategy {other:?}; expected nested_mcmc, conditional_normal, or sir_t"
            ))),
        }
    }
}

/// Random-walk chain settings. For `full` and `smi` this is the main chain;
/// for `cut` it configures the phi stage of models without an exact sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcToml {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    /// Common step size for every coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<f64>,
    /// Per-coordinate step sizes; mutually exclusive with `proposal_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapt: Option<bool>,
}

impl McmcToml {
    /// Materialize chain settings, seeding them from the run seed. The chain
    /// length is derived by the samplers from burn-in, thinning, and the
    /// number of requested draws, so there is no `steps` field here.
    pub fn to_mcmc(&self, seed: u64) -> CliResult<McmcConfig> {
        let mut mc = McmcConfig::default();
        mc.seed = seed;
        if let Some(b) = self.burn_in {
            mc.burn_in = b;
        }
        if let Some(t) = self.thin {
            mc.thin = t;
        }
        match (&self.proposal_scale, &self.scales) {
            (Some(_), Some(_)) => {
                return Err(CliError::config(
                    "mcmc: proposal_scale and scales are mutually exclusive",
                ));
            }
            (Some(s), None) => mc.proposal_scale = ProposalScale::Scalar(*s),
            (None, Some(v)) => mc.proposal_scale = ProposalScale::PerCoordinate(v.clone()),
            (None, None) => {}
        }
        if let Some(a) = self.adapt {
            mc.adapt = a;
        }
        Ok(mc)
    }
}

/// Optional overrides for the conjugate Gaussian chain model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussChainToml {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_eta: Option<usize>,
}

impl GaussChainToml {
    pub fn to_settings(&self) -> GaussChainSettings {
        let base = GaussChainSettings::default();
        GaussChainSettings {
            sigma1: self.sigma1.unwrap_or(base.sigma1),
            sigma2: self.sigma2.unwrap_or(base.sigma2),
            coupling: self.coupling.unwrap_or(base.coupling),
            d_eta: self.d_eta.unwrap_or(base.d_eta),
        }
    }
}

/// Settings for the `calibrate` task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateToml {
    /// Use the grouped bootstrap for the second-module rate instead of the
    /// plug-in sandwich. Only models with grouped data support it.
    #[serde(default)]
    pub bootstrap: bool,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_replicates() -> usize {
    200
}

impl Default for CalibrateToml {
    fn default() -> Self {
        Self { bootstrap: false, replicates: default_replicates() }
    }
}

/// Output location. Overridden by `GENCUT_OUTPUT_DIR` and the
/// `--output-dir` flag, in that order of increasing precedence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputToml {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parse a configuration file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse configuration text. Errors carry the offending key and span.
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Canonical serialization used for hashing and for embedding in the
    /// manifest. Formatting differences between two files describing the
    /// same run do not change its identity.
    pub fn canonical_toml(&self) -> CliResult<String> {
        toml::to_string(self)
            .map_err(|e| CliError::config(format!("cannot serialize config: {e}")))
    }

    /// Check the task-dependent rules before running.
    pub fn validate(&self, task: Task) -> CliResult<()> {
        if let Some(pinned) = self.task {
            if pinned != task {
                return Err(CliError::config(format!(
                    "task: config pins the task to {pinned} but the {task} subcommand was invoked"
                )));
            }
        }
        match (task, self.gamma) {
            (Task::Smi, None) => {
                return Err(CliError::config("gamma: required for the smi task"));
            }
            (Task::Smi, Some(g)) => {
                if !(g.is_finite() && (0.0..=1.0).contains(&g)) {
                    return Err(CliError::config(format!(
                        "gamma: must lie in [0, 1], got {g}"
                    )));
                }
            }
            (_, Some(_)) => {
                return Err(CliError::config(format!(
                    "gamma: only meaningful for the smi task, not {task}"
                )));
            }
            (_, None) => {}
        }
        if self.data.is_none() {
            return Err(CliError::config(format!(
                "data: a data file is required for the {task} task"
            )));
        }
        if task == Task::Diagnose && self.samples.is_none() {
            return Err(CliError::config(
                "samples: diagnose needs the samples CSV of an earlier cut run",
            ));
        }
        if matches!(task, Task::Cut | Task::Full | Task::Smi) && self.n_draws == 0 {
            return Err(CliError::config("n_draws: must be at least 1"));
        }
        for (name, value) in [("nu", self.nu), ("nu_prime", self.nu_prime)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CliError::config(format!(
                    "{name}: learning rates must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// The eta-attachment strategy, defaulting like the library does.
    pub fn strategy(&self) -> CliResult<CutStrategy> {
        match &self.strategy {
            Some(s) => s.to_strategy(),
            None => Ok(CutStrategy::default()),
        }
    }

    /// Chain settings seeded from the run seed.
    pub fn mcmc(&self) -> CliResult<McmcConfig> {
        match &self.mcmc {
            Some(m) => m.to_mcmc(self.seed),
            None => {
                let mut mc = McmcConfig::default();
                mc.seed = self.seed;
                Ok(mc)
            }
        }
    }

    /// The primary data path (validated to exist for every task).
    pub fn data_path(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::config("data: no data file configured"))
    }
}

/// Where outputs go: the `--output-dir` flag wins, then the
/// `GENCUT_OUTPUT_DIR` environment variable, then `output.dir` in the
/// config, then `./gencut-run`. Environment variables influence output
/// locations only; nothing else reads the environment.
pub fn resolve_output_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var("GENCUT_OUTPUT_DIR") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    config
        .output
        .as_ref()
        .and_then(|o| o.dir.clone())
        .unwrap_or_else(|| PathBuf::from("gencut-run"))
}
