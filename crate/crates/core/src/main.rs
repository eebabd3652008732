use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use robust_options::harness::{self, Level, RunConfig};

#[derive(Parser)]
#[command(name = "robust-options", version, about = "CVaR-constrained option learning on robust MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write reports, checkpoints and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint; prints the JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-parameter scores of a checkpoint as CSV.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-check suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Level::Fast)]
        level: Level,
    },
    /// Smallest aggregate CVaR among baseline summaries.
    SelectZeta {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
    },
}

fn load(path: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = load(&config)?;
            let summary = harness::cmd_train(&cfg, seed)?;
            println!("{}", serde_json::to_string_pretty(&summary.eval)?);
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            out,
        } => {
            let report = harness::cmd_eval(&load(&config)?, &checkpoint, seed)?;
            if let Some(path) = out {
                harness::write_json(&path, &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep {
            checkpoint,
            config,
            seed,
            out,
        } => {
            let csv = harness::sweep_csv(&harness::cmd_sweep(&load(&config)?, &checkpoint, seed)?);
            if let Some(path) = out {
                std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{csv}");
        }
        Command::Verify { level } => {
            let report = harness::cmd_verify(level);
            for s in &report.suites {
                eprintln!("{}", s.line());
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(report.passed);
        }
        Command::SelectZeta { reports } => {
            println!("{}", harness::cmd_select_zeta(&reports)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
