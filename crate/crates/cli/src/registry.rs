//! Compile-time model registry.
//!
//! Each entry knows how to build a [`TwoModuleSystem`] from a run
//! configuration (reading the data files it names) and, optionally, how to
//! simulate a synthetic data set and how to expose its grouped structure to
//! the bootstrap calibrator. The built-in entries cover the two benchmark
//! models and the conjugate Gaussian chain; plugins add entries through
//! [`Registry::register`] before handing the registry to the runner.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gencut_core::calibration::GroupResampler;
use gencut_core::models::gauss_chain::{gauss_chain_simulate, gauss_chain_system};
use gencut_core::models::hpv::{hpv_simulate, hpv_system, HpvData, HpvLoss, HpvTruth};
use gencut_core::models::re::{re_simulate, re_system, ReData, ReLoss, ReTruth};
use gencut_core::{ObsTable, TwoModuleSystem};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

/// Arguments of the `simulate` subcommand.
#[derive(Debug, Clone)]
pub struct SimulateRequest {
    pub seed: u64,
    pub out: PathBuf,
    /// Second output file, for models whose modules live in separate tables.
    pub out2: Option<PathBuf>,
}

/// What a simulation wrote.
#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub files: Vec<PathBuf>,
    pub note: String,
}

/// Grouped-data hooks for the bootstrap calibrator.
pub struct GroupedBootstrap {
    pub resampler: Box<dyn GroupResampler>,
    /// Restriction of the score to the eta coordinates the criterion moves.
    pub eta_mask: Option<Vec<bool>>,
}

type BuildFn = fn(&RunConfig) -> CliResult<TwoModuleSystem>;
type SimulateFn = fn(&SimulateRequest) -> CliResult<SimulateOutcome>;
type BootstrapFn = fn(&RunConfig) -> CliResult<GroupedBootstrap>;

/// One registered model.
pub struct ModelSpec {
    pub name: &'static str,
    pub build: BuildFn,
    pub simulate: Option<SimulateFn>,
    pub bootstrap: Option<BootstrapFn>,
}

/// Name-keyed collection of [`ModelSpec`] entries.
pub struct Registry {
    models: BTreeMap<&'static str, ModelSpec>,
}

impl Registry {
    /// The built-in models: `hpv`, `re`, and `gauss-chain`.
    pub fn builtin() -> Self {
        let mut reg = Registry { models: BTreeMap::new() };
        reg.register(ModelSpec {
            name: "hpv",
            build: build_hpv,
            simulate: Some(simulate_hpv),
            bootstrap: None,
        });
        reg.register(ModelSpec {
            name: "re",
            build: build_re,
            simulate: Some(simulate_re),
            bootstrap: Some(bootstrap_re),
        });
        reg.register(ModelSpec {
            name: "gauss-chain",
            build: build_gauss_chain,
            simulate: Some(simulate_gauss_chain),
            bootstrap: None,
        });
        reg
    }

    /// Add or replace an entry.
    pub fn register(&mut self, spec: ModelSpec) {
        self.models.insert(spec.name, spec);
    }

    /// Look up a model, or fail with the list of registered names.
    pub fn get(&self, name: &str) -> CliResult<&ModelSpec> {
        self.models.get(name).ok_or_else(|| {
            CliError::config(format!(
                "model: unknown model {name:?}; registered models are {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.keys().copied().collect()
    }
}

/// Attach the file name to read errors, which otherwise only carry the
/// underlying OS or CSV message.
fn read_context<T>(result: gencut_core::Result<T>, path: &std::path::Path) -> CliResult<T> {
    result.map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn reject_foreign_tables(cfg: &RunConfig, model: &str) -> CliResult<()> {
    if model != "gauss-chain" && cfg.gauss_chain.is_some() {
        return Err(CliError::config(format!(
            "gauss_chain: settings table not used by the {model} model"
        )));
    }
    if model != "gauss-chain" && cfg.data2.is_some() {
        return Err(CliError::config(format!(
            "data2: the {model} model reads a single table"
        )));
    }
    Ok(())
}

fn build_hpv(cfg: &RunConfig) -> CliResult<TwoModuleSystem> {
    reject_foreign_tables(cfg, "hpv")?;
    let path = cfg.data_path()?;
    let data = read_context(HpvData::read_csv_path(path), path)?;
    let loss = match &cfg.loss {
        Some(l) => l.to_hpv()?,
        None => HpvLoss::Poisson,
    };
    Ok(hpv_system(&data, loss, cfg.nu, cfg.nu_prime)?)
}

fn build_re(cfg: &RunConfig) -> CliResult<TwoModuleSystem> {
    reject_foreign_tables(cfg, "re")?;
    let path = cfg.data_path()?;
    let data = read_context(ReData::read_csv_path(path), path)?;
    let loss = match &cfg.loss {
        Some(l) => l.to_re()?,
        None => ReLoss::Gaussian,
    };
    Ok(re_system(&data, loss, cfg.nu, cfg.nu_prime)?)
}

fn build_gauss_chain(cfg: &RunConfig) -> CliResult<TwoModuleSystem> {
    if cfg.loss.is_some() {
        return Err(CliError::config("loss: the gauss-chain model has a single loss"));
    }
    let settings = cfg.gauss_chain.as_ref().map(|g| g.to_settings()).unwrap_or_default();
    let z_path = cfg.data_path()?;
    let z = read_context(ObsTable::read_csv_path(z_path), z_path)?;
    let w_path = cfg.data2.as_deref().ok_or_else(|| {
        CliError::config("data2: the gauss-chain model keeps its two modules in separate tables")
    })?;
    let w = read_context(ObsTable::read_csv_path(w_path), w_path)?;
    Ok(gauss_chain_system(z, w, &settings, cfg.nu, cfg.nu_prime)?)
}

fn simulate_hpv(req: &SimulateRequest) -> CliResult<SimulateOutcome> {
    let data = hpv_simulate(13, &HpvTruth::default(), req.seed)?;
    data.write_csv_path(&req.out)?;
    Ok(SimulateOutcome {
        files: vec![req.out.clone()],
        note: "13 countries of paired prevalence and incidence records".into(),
    })
}

fn simulate_re(req: &SimulateRequest) -> CliResult<SimulateOutcome> {
    let data = re_simulate(100, 10, &ReTruth::default(), req.seed)?;
    data.write_csv_path(&req.out)?;
    Ok(SimulateOutcome {
        files: vec![req.out.clone()],
        note: "100 groups of 10, group 1 mean-shifted away from the random-effects prior".into(),
    })
}

fn simulate_gauss_chain(req: &SimulateRequest) -> CliResult<SimulateOutcome> {
    let out2 = req.out2.clone().ok_or_else(|| {
        CliError::config("--out2: the gauss-chain model writes its two modules to separate files")
    })?;
    let settings = gencut_core::models::gauss_chain::GaussChainSettings::default();
    let eta_true = vec![0.4; settings.d_eta];
    let (z, w) = gauss_chain_simulate(500, 200, 0.2, &eta_true, &settings, req.seed)?;
    z.write_csv_path(&req.out)?;
    w.write_csv_path(&out2)?;
    Ok(SimulateOutcome {
        files: vec![req.out.clone(), out2],
        note: "module-1 table z and module-2 table w1".into(),
    })
}

fn bootstrap_re(cfg: &RunConfig) -> CliResult<GroupedBootstrap> {
    let path = cfg.data_path()?;
    let data = read_context(ReData::read_csv_path(path), path)?;
    let n = data.n_groups();
    // The eta block is one random effect per group plus the hierarchical
    // scale; only the prior identifies the scale, so it is masked out of
    // the bootstrap score.
    let mut mask = vec![true; n];
    mask.push(false);
    Ok(GroupedBootstrap { resampler: Box::new(data), eta_mask: Some(mask) })
}
