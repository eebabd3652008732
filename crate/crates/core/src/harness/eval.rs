//! Evaluation of a trained policy: soft robust loss, VaR, CVaR, worst case and
//! the per-parameter sweep.
//!
//! Losses are reported as they are; every loss field has a matching score
//! field equal to its negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::enumerate_loss_distribution;
use crate::harness::config::{EvalConfig, EvalMethod, EVAL_STREAM};
use crate::option_policy::OptionPolicySet;
use crate::risk::{cvar_epsilon, var_epsilon, LossSamples};
use crate::robust_mdp::RobustMdp;
use crate::rollout::sample_batch;

/// Two-sided normal quantile for 95% intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    Enumeration,
    MonteCarlo,
}

/// A loss distribution with the way it was obtained.
#[derive(Debug, Clone)]
pub struct LossEstimate {
    pub samples: LossSamples,
    pub source: EvalSource,
}

impl LossEstimate {
    /// Half-width of the 95% interval of the mean; zero for exact distributions.
    pub fn mean_ci(&self) -> f64 {
        match self.source {
            EvalSource::Enumeration => 0.0,
            EvalSource::MonteCarlo => ci_half_width(self.samples.std_dev(), self.samples.len()),
        }
    }
}

/// `1.96 · sd / √n`, zero for fewer than two samples.
pub fn ci_half_width(sd: f64, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        Z95 * sd / (n as f64).sqrt()
    }
}

/// The loss distribution of `policy` on `mdp` by the configured method.
///
/// `stream` separates Monte-Carlo draws of different evaluations under one seed.
pub fn loss_distribution(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    cfg: &EvalConfig,
    seed: u64,
    stream: u64,
) -> Result<LossEstimate> {
    let monte_carlo = || -> Result<LossEstimate> {
        let offset = EVAL_STREAM + (stream << 32);
        let batch = sample_batch(mdp, policy, cfg.sampling_mode, cfg.n_eval_episodes, seed, offset)?;
        Ok(LossEstimate {
            samples: LossSamples::unweighted(batch.losses()),
            source: EvalSource::MonteCarlo,
        })
    };
    let enumerated = || -> Result<LossEstimate> {
        Ok(LossEstimate {
            samples: enumerate_loss_distribution(mdp, policy, cfg.node_budget)?,
            source: EvalSource::Enumeration,
        })
    };
    match cfg.method {
        EvalMethod::Enumeration => enumerated(),
        EvalMethod::MonteCarlo => monte_carlo(),
        EvalMethod::Auto => match enumerated() {
            Err(Error::EnumerationBudget { .. }) => monte_carlo(),
            other => other,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    /// `𝔼[𝒞 | p]`.
    pub loss: f64,
    pub score: f64,
    pub ci: f64,
}

/// Expected loss with every state whose set contains `p` pinned to `p`.
pub fn sweep(mdp: &RobustMdp, policy: &OptionPolicySet, cfg: &EvalConfig, seed: u64) -> Result<Vec<SweepRow>> {
    let values = cfg.sweep_values.clone().unwrap_or_else(|| mdp.uncertain_values());
    let values = if values.is_empty() { vec![mdp.params(0).mean()] } else { values };
    values
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let conditioned = mdp.condition_on_value(p);
            let est = loss_distribution(&conditioned, policy, cfg, seed, k as u64 + 1)?;
            let loss = est.samples.mean();
            Ok(SweepRow {
                param: p,
                loss,
                score: -loss,
                ci: est.mean_ci(),
            })
        })
        .collect()
}

/// Sweep rows as CSV with columns `param,mean_score,ci`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param,mean_score,ci\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.param, r.score, r.ci));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub source: EvalSource,
    /// Number of Monte-Carlo episodes, absent for enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_episodes: Option<usize>,
    pub epsilon: f64,
    pub soft_robust_loss: f64,
    pub soft_robust_score: f64,
    pub soft_robust_ci: f64,
    pub var: f64,
    pub cvar: f64,
    pub cvar_score: f64,
    /// Largest per-parameter expected loss of the sweep.
    pub worst_case_loss: f64,
    pub worst_case_score: f64,
    pub worst_case_param: f64,
    pub sweep: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_satisfied: Option<bool>,
}

pub fn evaluate(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    cfg: &EvalConfig,
    zeta: Option<f64>,
    seed: u64,
) -> Result<EvalReport> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let est = loss_distribution(mdp, policy, cfg, seed, 0)?;
    let mean = est.samples.mean();
    let var = var_epsilon(&est.samples, cfg.epsilon)?;
    let cvar = cvar_epsilon(&est.samples, cfg.epsilon)?;
    let rows = sweep(mdp, policy, cfg, seed)?;
    let worst = rows
        .iter()
        .max_by(|a, b| a.loss.total_cmp(&b.loss))
        .ok_or_else(|| Error::Domain("empty parameter sweep".into()))?;
    Ok(EvalReport {
        seed,
        source: est.source,
        n_episodes: (est.source == EvalSource::MonteCarlo).then_some(est.samples.len()),
        epsilon: cfg.epsilon,
        soft_robust_loss: mean,
        soft_robust_score: -mean,
        soft_robust_ci: est.mean_ci(),
        var,
        cvar,
        cvar_score: -cvar,
        worst_case_loss: worst.loss,
        worst_case_score: -worst.loss,
        worst_case_param: worst.param,
        zeta,
        constraint_satisfied: zeta.map(|z| cvar <= z),
        sweep: rows,
    })
}

/// Mean and 95% half-width of one metric over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci: f64,
}

impl MeanCi {
    /// Sums in sorted order so the result does not depend on seed order.
    pub fn of(values: &[f64]) -> Self {
        let mut xs = values.to_vec();
        xs.sort_by(|a, b| a.total_cmp(b));
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, ci: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mut dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        dev.sort_by(|a, b| a.total_cmp(b));
        let sd = if n > 1 { (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Self {
            mean,
            ci: ci_half_width(sd, n),
        }
    }
}

/// Per-seed reports with their aggregates, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub algorithm: Option<String>,
    pub env: String,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    pub n_seeds: usize,
    pub soft_robust_loss: MeanCi,
    pub soft_robust_score: MeanCi,
    pub cvar: MeanCi,
    pub cvar_score: MeanCi,
    pub worst_case_loss: MeanCi,
    /// Seeds with `CVaR ≤ ζ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfied_count: Option<usize>,
    pub per_seed: Vec<EvalReport>,
}

impl AggregateReport {
    pub fn new(algorithm: Option<String>, env: String, epsilon: f64, zeta: Option<f64>, mut per_seed: Vec<EvalReport>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::Domain("aggregate needs at least one seed".into()));
        }
        per_seed.sort_by_key(|r| r.seed);
        let col = |f: fn(&EvalReport) -> f64| MeanCi::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            schema_version: super::config::SCHEMA_VERSION,
            algorithm,
            env,
            epsilon,
            zeta,
            n_seeds: per_seed.len(),
            soft_robust_loss: col(|r| r.soft_robust_loss),
            soft_robust_score: col(|r| r.soft_robust_score),
            cvar: col(|r| r.cvar),
            cvar_score: col(|r| r.cvar_score),
            worst_case_loss: col(|r| r.worst_case_loss),
            satisfied_count: zeta.map(|z| per_seed.iter().filter(|r| r.cvar <= z).count()),
            per_seed,
        })
    }

    /// One row per seed, for recounting constraint satisfaction from disk.
    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("seed,soft_robust_loss,var,cvar,worst_case_loss,constraint_satisfied\n");
        for r in &self.per_seed {
            let sat = r.constraint_satisfied.map_or(String::new(), |b| b.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed, r.soft_robust_loss, r.var, r.cvar, r.worst_case_loss, sat
            ));
        }
        out
    }
}
