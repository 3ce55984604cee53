//! The `gencut` binary: subcommands map one-to-one onto run tasks, plus a
//! `simulate` convenience for producing synthetic data sets.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gencut_cli::config::{resolve_output_dir, RunConfig, Task};
use gencut_cli::registry::{Registry, SimulateRequest};
use gencut_cli::{runner, CliError, CliResult, EXIT_OK};

#[derive(Parser)]
#[command(
    name = "gencut",
    version,
    about = "Cut, full, and semi-modular posterior sampling for two-module models"
)]
struct Cli {
    /// Cap the worker-thread pool (0 or omitted: one worker per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-stage cut run: phi unaffected by the second module, eta attached
    /// conditionally.
    Cut(TaskArgs),
    /// Joint posterior over (phi, eta) by random-walk Metropolis.
    Full(TaskArgs),
    /// Semi-modular run interpolating between cut and full via gamma.
    Smi(TaskArgs),
    /// Learning-rate calibration report.
    Calibrate(TaskArgs),
    /// Uncertainty-propagation diagnostics over a finished cut run's samples.
    Diagnose(TaskArgs),
    /// Write a synthetic data set for a registered model.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TaskArgs {
    /// Run configuration (TOML).
    config: PathBuf,
    /// Output directory; beats GENCUT_OUTPUT_DIR and the config's `output.dir`.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Registered model name.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (the module-1 table for two-file models).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Second output CSV for two-file models.
    #[arg(long, value_name = "FILE")]
    out2: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Ignore the error from configuring twice; the first call wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => std::process::exit(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    let registry = Registry::builtin();
    match command {
        Command::Cut(args) => run_task(Task::Cut, &registry, args),
        Command::Full(args) => run_task(Task::Full, &registry, args),
        Command::Smi(args) => run_task(Task::Smi, &registry, args),
        Command::Calibrate(args) => run_task(Task::Calibrate, &registry, args),
        Command::Diagnose(args) => run_task(Task::Diagnose, &registry, args),
        Command::Simulate(args) => simulate(&registry, args),
    }
}

fn run_task(task: Task, registry: &Registry, args: TaskArgs) -> CliResult<()> {
    let config = RunConfig::load(&args.config)?;
    let out_dir = resolve_output_dir(args.output_dir.as_deref(), &config);
    let report = runner::run(task, &config, registry, &out_dir)?;
    for line in &report.lines {
        println!("{line}");
    }
    for file in &report.files {
        println!("wrote {}", report.out_dir.join(file).display());
    }
    Ok(())
}

fn simulate(registry: &Registry, args: SimulateArgs) -> CliResult<()> {
    let spec = registry.get(&args.model)?;
    let hook = spec.simulate.ok_or_else(|| {
        CliError::config(format!("model: {} does not provide a simulator", args.model))
    })?;
    let request = SimulateRequest { seed: args.seed, out: args.out, out2: args.out2 };
    let outcome = hook(&request)?;
    println!("simulated {}: {}", args.model, outcome.note);
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}
