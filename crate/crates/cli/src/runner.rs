//! Task execution: build the system named by the configuration, run the
//! requested task, and leave the outputs plus a manifest in the output
//! directory.
//!
//! Outputs per task:
//!
//! * `cut`, `full`, `smi`: `samples.csv` (one column per parameter, phi
//!   block first) with its `samples.csv.meta.json` sidecar,
//! * `calibrate`: `calibration.json`,
//! * `diagnose`: `propagation.csv` and `diagnostics.json`,
//!
//! and `manifest.json` in every case, written last so its checksums cover
//! the finished files.

use std::path::{Path, PathBuf};

use gencut_core::calibration::{calibrate, calibrate_nu2_bootstrap, BootstrapConfig};
use gencut_core::diagnostics::{
    propagation_from_samples, third_cumulant_decomposition, total_variance_decomposition,
};
use gencut_core::samplers::{sample_cut, sample_full, CutConfig, FullConfig};
use gencut_core::semimodular::{sample_smi, SmiConfig};
use gencut_core::{SampleSet, TwoModuleSystem};
use nalgebra_json::{matrix_rows, vector_row};

use crate::config::{RunConfig, Task};
use crate::manifest::Manifest;
use crate::registry::Registry;
use crate::{CliError, CliResult};

/// What a finished run looks like to the caller.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Output file names relative to `out_dir`, manifest last.
    pub files: Vec<String>,
    /// Human-readable summary lines.
    pub lines: Vec<String>,
}

/// Execute one task from a validated-on-entry configuration.
pub fn run(
    task: Task,
    config: &RunConfig,
    registry: &Registry,
    out_dir: &Path,
) -> CliResult<RunReport> {
    config.validate(task)?;
    let spec = registry.get(&config.model)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut manifest = Manifest::new(task, config)?;
    let mut files: Vec<String> = Vec::new();
    let mut lines: Vec<String> = Vec::new();

    let sys = (spec.build)(config)?;
    match task {
        Task::Cut => {
            let cut_cfg = CutConfig {
                n_draws: config.n_draws,
                seed: config.seed,
                strategy: config.strategy()?,
                phi_mcmc: config.mcmc.as_ref().map(|m| m.to_mcmc(config.seed)).transpose()?,
            };
            let samples = sample_cut(&sys, &cut_cfg)?;
            write_samples(&samples, out_dir, &mut manifest, &mut files)?;
            lines.push(describe_samples("cut", &samples));
        }
        Task::Full => {
            let full_cfg =
                FullConfig { n_draws: config.n_draws, mcmc: config.mcmc()?, init: None };
            let samples = sample_full(&sys, &full_cfg)?;
            write_samples(&samples, out_dir, &mut manifest, &mut files)?;
            lines.push(describe_samples("full", &samples));
        }
        Task::Smi => {
            let smi_cfg = SmiConfig {
                gamma: config.gamma.expect("validated"),
                n_draws: config.n_draws,
                mcmc: config.mcmc()?,
                eta: config.strategy()?,
                eta_star: None,
            };
            let samples = sample_smi(&sys, &smi_cfg)?;
            write_samples(&samples, out_dir, &mut manifest, &mut files)?;
            lines.push(describe_samples("smi", &samples));
        }
        Task::Calibrate => {
            let value = run_calibrate(config, spec, &sys, &mut lines)?;
            let path = out_dir.join("calibration.json");
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| CliError::io(format!("cannot serialize calibration: {e}")))?;
            std::fs::write(&path, text + "\n")
                .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
            manifest.add_file("calibration.json", &path)?;
            files.push("calibration.json".into());
        }
        Task::Diagnose => {
            run_diagnose(config, &sys, out_dir, &mut manifest, &mut files, &mut lines)?;
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    files.push("manifest.json".into());
    Ok(RunReport { out_dir: out_dir.to_path_buf(), files, lines })
}

fn write_samples(
    samples: &SampleSet,
    out_dir: &Path,
    manifest: &mut Manifest,
    files: &mut Vec<String>,
) -> CliResult<()> {
    let path = out_dir.join("samples.csv");
    samples.write_csv_path(&path)?;
    manifest.add_file("samples.csv", &path)?;
    files.push("samples.csv".into());
    let sidecar = out_dir.join("samples.csv.meta.json");
    manifest.add_file("samples.csv.meta.json", &sidecar)?;
    files.push("samples.csv.meta.json".into());
    for (k, v) in samples.meta() {
        manifest.meta.insert(k.clone(), v.clone());
    }
    Ok(())
}

fn describe_samples(task: &str, samples: &SampleSet) -> String {
    format!(
        "{task}: {} draws x {} parameters ({} ...)",
        samples.n_draws(),
        samples.dim(),
        samples.names().first().map(String::as_str).unwrap_or("")
    )
}

fn run_calibrate(
    config: &RunConfig,
    spec: &crate::registry::ModelSpec,
    sys: &TwoModuleSystem,
    lines: &mut Vec<String>,
) -> CliResult<serde_json::Value> {
    let settings = config.calibrate.clone().unwrap_or_default();
    if settings.bootstrap {
        let hook = spec.bootstrap.ok_or_else(|| {
            CliError::config(format!(
                "calibrate.bootstrap: the {} model has no grouped representation",
                config.model
            ))
        })?;
        let grouped = hook(config)?;
        let bc = BootstrapConfig {
            replicates: settings.replicates,
            seed: config.seed,
            eta_mask: grouped.eta_mask,
            uniform_weights: false,
        };
        let report = calibrate_nu2_bootstrap(sys, grouped.resampler.as_ref(), &bc)?;
        lines.push(format!("calibrate (bootstrap): nu_prime {:.6}", report.nu_prime));
        Ok(report.to_json())
    } else {
        let report = calibrate(sys)?;
        lines.push(format!("calibrate: nu {:.6}, nu_prime {:.6}", report.nu, report.nu_prime));
        Ok(report.to_json())
    }
}

fn run_diagnose(
    config: &RunConfig,
    sys: &TwoModuleSystem,
    out_dir: &Path,
    manifest: &mut Manifest,
    files: &mut Vec<String>,
    lines: &mut Vec<String>,
) -> CliResult<()> {
    let samples_path = config.samples.as_deref().expect("validated");
    let samples = SampleSet::read_csv_path(samples_path).map_err(|e| {
        match CliError::from(e) {
            CliError::Io(m) => CliError::Io(format!("{}: {m}", samples_path.display())),
            other => other,
        }
    })?;
    let table = propagation_from_samples(sys, &samples)?;
    let flat = table.to_table()?;
    let prop_path = out_dir.join("propagation.csv");
    flat.write_csv_path(&prop_path)?;
    manifest.add_file("propagation.csv", &prop_path)?;
    files.push("propagation.csv".into());

    let tv = total_variance_decomposition(&table)?;
    let tc = third_cumulant_decomposition(&table)?;
    let value = serde_json::json!({
        "n_rows": table.len(),
        "n_failures": table.n_failures,
        "eta_names": sys.eta_names(),
        "variance": {
            "within": matrix_rows(&tv.within),
            "between": matrix_rows(&tv.between),
            "total": matrix_rows(&tv.total),
        },
        "third_cumulant": {
            "mode_skew_part": vector_row(&tc.mode_skew_part),
            "mode_variance_coupling": vector_row(&tc.mode_variance_coupling),
            "total": vector_row(&tc.total),
        },
    });
    let diag_path = out_dir.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&value)
        .map_err(|e| CliError::io(format!("cannot serialize diagnostics: {e}")))?;
    std::fs::write(&diag_path, text + "\n")
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", diag_path.display())))?;
    manifest.add_file("diagnostics.json", &diag_path)?;
    files.push("diagnostics.json".into());
    lines.push(format!(
        "diagnose: {} propagated draws, {} inner failures",
        table.len(),
        table.n_failures
    ));
    Ok(())
}

/// Minimal JSON views of nalgebra types, kept local to the runner.
mod nalgebra_json {
    use gencut_core::nalgebra::{DMatrix, DVector};

    pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    pub fn vector_row(v: &DVector<f64>) -> Vec<f64> {
        v.iter().copied().collect()
    }
}
