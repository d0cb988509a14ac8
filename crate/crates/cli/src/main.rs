//! Configuration-driven experiment runner.
//!
//! Exit codes: 0 success, 1 falsified invariant or inequality, 2 schema
//! violation, 3 infeasible geometry or model precondition, 4 numerical
//! failure. Thread count is controlled by `OPENBLAS_NUM_THREADS` only.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use output::RunWriter;

#[derive(Debug)]
pub struct RunError {
    pub code: u8,
    pub msg: String,
}

impl RunError {
    pub fn schema(msg: String) -> Self {
        Self { code: 2, msg }
    }

    pub fn infeasible(msg: String) -> Self {
        Self { code: 3, msg }
    }

    pub fn numerical(msg: String) -> Self {
        Self { code: 4, msg }
    }

    pub fn falsified(msg: String) -> Self {
        Self { code: 1, msg }
    }

    pub fn from_core(e: davies_sim::Error) -> Self {
        use davies_sim::Error as E;
        match e {
            E::InvalidModel(_) | E::InfeasibleGeometry(_) | E::NonCommuting(_)
            | E::SiteOutOfRange { .. } => Self::infeasible(e.to_string()),
            _ => Self::numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "davies-sim", version, about = "Davies thermalization diagnostics for commuting spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides the probe seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: `out`, or the config's output.path).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Lift the desk-scale guard on the chain length.
        #[arg(long)]
        force: bool,
    },
    /// Parse and validate a config without running anything.
    Validate { config: PathBuf },
}

fn load_config(path: &PathBuf) -> Result<(ExperimentConfig, serde_json::Value), RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::schema(format!("cannot read {path:?}: {e}")))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let echo: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RunError::schema(e.to_string()))?;
    Ok((cfg, echo))
}

fn run(
    cfg: &ExperimentConfig,
    echo: &serde_json::Value,
    seed: Option<u64>,
    out: Option<PathBuf>,
    force: bool,
) -> Result<(), RunError> {
    let bound = cfg.experiment.superoperator_bound();
    if let Some(&worst) = cfg.n_values().iter().max() {
        if worst > bound && !force {
            return Err(RunError::infeasible(format!(
                "n = {worst} exceeds the desk-scale bound {bound} for this experiment; pass --force to override"
            )));
        }
    }
    let seed = seed.unwrap_or_else(|| cfg.probe_spec().seed);
    let dir = out
        .or_else(|| cfg.output.as_ref().and_then(|o| o.path.clone().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut writer = RunWriter::new(&dir, seed)?;
    let result = experiments::run_experiment(cfg, &mut writer, seed);
    // the manifest is written even when a check fails so CI can inspect it
    writer.write_manifest(echo)?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out, force } => {
            load_config(&config).and_then(|(cfg, echo)| run(&cfg, &echo, seed, out, force))
        }
        Command::Validate { config } => load_config(&config).map(|(cfg, _)| {
            println!("ok: {:?} experiment over n = {:?}", cfg.experiment, cfg.n_values());
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
