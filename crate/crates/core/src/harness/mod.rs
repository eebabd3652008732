//! Experiment harness behind the command-line tool.
//!
//! `cmd_train` writes, under the configured output directory,
//!
//! ```text
//! seed_<k>/report.csv       one row per iteration
//! seed_<k>/checkpoint.json  the trained option policies
//! seed_<k>/eval.json        the seed's evaluation
//! per_seed.csv              one evaluation row per seed
//! summary.json              aggregate evaluation plus per-seed wall times
//! ```

pub mod config;
pub mod eval;
pub mod verify;
pub mod zeta;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::option_policy::OptionPolicySet;
use crate::trainers::{train, TrainingReport};

pub use config::{EvalConfig, EvalMethod, PolicyInit, PolicyInitKind, RunConfig, SeedSpec, SCHEMA_VERSION};
pub use eval::{evaluate, sweep, sweep_csv, AggregateReport, EvalReport, EvalSource, MeanCi, SweepRow};
pub use verify::{Level, SuiteResult, VerifyReport};
pub use zeta::{select_zeta, select_zeta_from};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub policy: OptionPolicySet,
    pub report: TrainingReport,
    pub eval: EvalReport,
}

/// Trains and evaluates one seed without touching the disk.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun> {
    let mdp = cfg.build_env()?;
    let policy0 = cfg.policy.build(mdp.n_states(), mdp.n_actions(), seed);
    let (policy, report) = train(&mdp, &policy0, &cfg.trainer_for(seed))?;
    let eval = evaluate(&mdp, &policy, &cfg.eval, cfg.trainer.zeta, seed)?;
    Ok(SeedRun {
        seed,
        policy,
        report,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub wall_time_secs: f64,
    pub final_v: f64,
    pub final_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    /// [`crate::envs::EnvSpec::spec_hash`] of the trained environment.
    pub env_hash: String,
    pub config: RunConfig,
    pub timings: Vec<SeedTiming>,
    pub eval: AggregateReport,
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed_{seed}"))
}

/// Trains every configured seed in parallel (or only `seed_override`) and writes the artifacts.
pub fn cmd_train(cfg: &RunConfig, seed_override: Option<u64>) -> Result<TrainSummary> {
    cfg.validate()?;
    let seeds = seed_override.map_or_else(|| cfg.seeds.seeds(), |s| vec![s]);
    let runs = seeds.par_iter().map(|&seed| run_seed(cfg, seed)).collect::<Result<Vec<_>>>()?;
    for run in &runs {
        let dir = seed_dir(&cfg.output_dir, run.seed);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.csv"), run.report.to_csv())?;
        run.policy.save(&dir.join("checkpoint.json"))?;
        write_json(&dir.join("eval.json"), &run.eval)?;
    }
    let timings = runs
        .iter()
        .map(|r| SeedTiming {
            seed: r.seed,
            wall_time_secs: r.report.wall_time_secs,
            final_v: r.report.records.last().map_or(r.report.initial_v, |x| x.v),
            final_lambda: r.report.records.last().map_or(f64::NAN, |x| x.lambda),
        })
        .collect();
    let eval = AggregateReport::new(
        Some(cfg.trainer.algorithm.name().into()),
        format!("{:?}", cfg.env.name),
        cfg.eval.epsilon,
        cfg.trainer.zeta,
        runs.into_iter().map(|r| r.eval).collect(),
    )?;
    fs::write(cfg.output_dir.join("per_seed.csv"), eval.per_seed_csv())?;
    let summary = TrainSummary {
        schema_version: SCHEMA_VERSION,
        env_hash: cfg.env.spec_hash(),
        config: cfg.clone(),
        timings,
        eval,
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Evaluates a saved checkpoint on the config's env.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, seed: u64) -> Result<AggregateReport> {
    let mdp = cfg.build_env()?;
    let policy = OptionPolicySet::load(checkpoint)?;
    let report = evaluate(&mdp, &policy, &cfg.eval, cfg.trainer.zeta, seed)?;
    AggregateReport::new(None, format!("{:?}", cfg.env.name), cfg.eval.epsilon, cfg.trainer.zeta, vec![report])
}

pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, seed: u64) -> Result<Vec<SweepRow>> {
    let mdp = cfg.build_env()?;
    let policy = OptionPolicySet::load(checkpoint)?;
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    sweep(&mdp, &policy, &cfg.eval, seed)
}

pub fn cmd_verify(level: Level) -> VerifyReport {
    verify::run(level)
}

/// Reads `summary.json` (or bare aggregate) files and returns the smallest aggregate CVaR.
pub fn cmd_select_zeta(paths: &[PathBuf]) -> Result<f64> {
    let reports = paths.iter().map(|p| load_aggregate(p)).collect::<Result<Vec<_>>>()?;
    select_zeta(&reports)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AggregateFile {
    Summary(Box<TrainSummary>),
    Aggregate(AggregateReport),
}

pub fn load_aggregate(path: &Path) -> Result<AggregateReport> {
    Ok(match read_json::<AggregateFile>(path)? {
        AggregateFile::Summary(s) => s.eval,
        AggregateFile::Aggregate(a) => a,
    })
}
