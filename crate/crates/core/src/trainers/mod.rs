//! Training loops: OC3, SoftRobust, WorstCase and EOOpt-ε.
//!
//! All four share one loop. Each iteration samples a batch under the current
//! policy, estimates the option gradients on the algorithm's loss channel,
//! takes a descent step on θ and then (OC3 only) updates `v` and `λ` from the
//! same batch, using gradients computed at the pre-update state.

pub mod critic;
pub mod estimator;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augmentation::augment_episode;
use crate::error::{Error, Result};
use crate::option_policy::OptionPolicySet;
use crate::risk::{self, LagrangianState, LossSamples};
use crate::robust_mdp::{Episode, RobustMdp};
use crate::rollout::{sample_batch, ParamMode};

pub use critic::{CriticTables, CriticTarget};
pub use estimator::{exact_critic_gradient, monte_carlo_gradient, returns_to_go, EstimatorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Oc3,
    SoftRobust,
    WorstCase,
    #[serde(alias = "eoopt_eps")]
    EoOpt,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Oc3 => "oc3",
            Algorithm::SoftRobust => "soft_robust",
            Algorithm::WorstCase => "worst_case",
            Algorithm::EoOpt => "eo_opt",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Critic {
    /// Exact values of the current policy, recomputed every iteration.
    #[default]
    ExactDp,
    /// Sampled returns with a per-`(t, s)` batch-mean baseline.
    MonteCarlo,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_lambda_init() -> f64 {
    1.0
}
fn default_warmup() -> usize {
    1000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub n_iter: usize,
    pub n_epi: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Required for OC3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    pub alpha_theta: f64,
    #[serde(default)]
    pub alpha_v: f64,
    #[serde(default)]
    pub alpha_lambda: f64,
    #[serde(default = "default_lambda_init")]
    pub lambda_init: f64,
    /// Fixed initial `v`; when absent, the empirical VaR of a warm-up batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_init: Option<f64>,
    #[serde(default = "default_warmup")]
    pub warmup_episodes: usize,
    #[serde(default)]
    pub critic: Critic,
    #[serde(default)]
    pub sampling_mode: ParamMode,
    #[serde(default = "default_true")]
    pub discount_weighting: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(algorithm: Algorithm, n_iter: usize, n_epi: usize, alpha_theta: f64) -> Self {
        Self {
            algorithm,
            n_iter,
            n_epi,
            epsilon: default_epsilon(),
            zeta: None,
            alpha_theta,
            alpha_v: 0.0,
            alpha_lambda: 0.0,
            lambda_init: default_lambda_init(),
            v_init: None,
            warmup_episodes: default_warmup(),
            critic: Critic::ExactDp,
            sampling_mode: ParamMode::PerTrajectoryParam,
            discount_weighting: true,
            seed: 0,
        }
    }

    /// Field-level validation; paths are reported relative to the run config.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::schema(format!("trainer.{field}"), msg));
        if self.n_epi == 0 {
            return bad("n_epi", "must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon", format!("must lie in (0, 1), got {}", self.epsilon));
        }
        for (name, value) in [
            ("alpha_theta", self.alpha_theta),
            ("alpha_v", self.alpha_v),
            ("alpha_lambda", self.alpha_lambda),
            ("lambda_init", self.lambda_init),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return bad(name, format!("must be finite and non-negative, got {value}"));
            }
        }
        if let Some(z) = self.zeta.filter(|z| !z.is_finite()) {
            return bad("zeta", format!("must be finite, got {z}"));
        }
        if let Some(v) = self.v_init.filter(|v| !v.is_finite()) {
            return bad("v_init", format!("must be finite, got {v}"));
        }
        match self.algorithm {
            Algorithm::Oc3 if self.zeta.is_none() => bad("zeta", "required for oc3".into()),
            Algorithm::EoOpt if (self.n_epi as f64) * self.epsilon < 1.0 => {
                bad("n_epi", "eo_opt needs n_epi * epsilon >= 1".into())
            }
            Algorithm::WorstCase if self.critic == Critic::MonteCarlo => {
                bad("critic", "worst_case needs the exact_dp critic".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Batch mean of `𝒞`.
    pub soft_robust_loss: f64,
    /// Batch CVaR of `𝒞` at the configured ε.
    pub cvar: f64,
    pub v: f64,
    pub lambda: f64,
    /// `v + 𝔼[𝒞″]/ε − ζ` at the pre-update `(v, λ)`; absent without ζ.
    pub constraint_violation: Option<f64>,
    /// Episodes used for the θ step.
    pub used_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub algorithm: Algorithm,
    pub records: Vec<IterationRecord>,
    pub initial_v: f64,
    pub wall_time_secs: f64,
}

impl TrainingReport {
    /// One row per iteration. Wall time is left out so that reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,soft_robust_loss,cvar,v,lambda,constraint_violation,used_episodes\n");
        for r in &self.records {
            let viol = r.constraint_violation.map_or(String::new(), |x| x.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration, r.soft_robust_loss, r.cvar, r.v, r.lambda, viol, r.used_episodes
            ));
        }
        out
    }
}

/// Stream offsets: the warm-up batch uses streams below `2^32`, iteration `i` uses `(i + 1) · 2^32 + k`.
fn iteration_offset(i: usize) -> u64 {
    (i as u64 + 1) << 32
}

fn losses(episodes: &[Episode], gamma: f64) -> Vec<f64> {
    episodes.iter().map(|e| e.loss(gamma)).collect()
}

fn check_finite(iteration: usize, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            what: what.into(),
        })
    }
}

/// Indices of the episodes at or above the empirical upper-ε percentile of `losses`.
pub fn eoopt_kept(losses: &[f64], epsilon: f64) -> Result<Vec<usize>> {
    let q = risk::var_epsilon(&LossSamples::unweighted(losses.to_vec()), epsilon)?;
    Ok((0..losses.len()).filter(|&k| losses[k] >= q).collect())
}

/// Runs the configured algorithm from `policy0`.
pub fn train(mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    cfg.validate()?;
    policy0.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let start = Instant::now();
    let gamma = mdp.discount();
    let mut policy = policy0.clone();
    let opts = EstimatorOptions {
        discount_weighting: cfg.discount_weighting,
    };
    let v0 = match cfg.v_init {
        Some(v) => v,
        None => {
            let warm = sample_batch(mdp, &policy, cfg.sampling_mode, cfg.warmup_episodes.max(1), cfg.seed, 0)?;
            risk::var_epsilon(&LossSamples::unweighted(warm.losses()), cfg.epsilon)?
        }
    };
    let constrained = cfg.algorithm == Algorithm::Oc3;
    let mut lag = LagrangianState::new(
        v0,
        if constrained { cfg.lambda_init } else { 0.0 },
        cfg.zeta.unwrap_or(f64::NAN),
        cfg.epsilon,
        if constrained { cfg.alpha_v } else { 0.0 },
        if constrained { cfg.alpha_lambda } else { 0.0 },
    )?;
    let mut records = Vec::with_capacity(cfg.n_iter);
    for i in 0..cfg.n_iter {
        let batch = sample_batch(mdp, &policy, cfg.sampling_mode, cfg.n_epi, cfg.seed, iteration_offset(i))?;
        let ls = losses(&batch.episodes, gamma);
        check_finite(i, "episode loss", &ls)?;
        let samples = LossSamples::unweighted(ls.clone());

        let (direction, used) = match cfg.algorithm {
            Algorithm::EoOpt => {
                let kept: Vec<&Episode> = eoopt_kept(&ls, cfg.epsilon)?.into_iter().map(|k| &batch.episodes[k]).collect();
                let returns: Vec<Vec<f64>> = kept.iter().map(|e| returns_to_go(&e.costs(), gamma)).collect();
                (monte_carlo_gradient(&kept, &returns, &policy, gamma, opts, true), kept.len())
            }
            _ => {
                let all: Vec<&Episode> = batch.episodes.iter().collect();
                let g = match cfg.critic {
                    Critic::ExactDp => {
                        let target = match cfg.algorithm {
                            Algorithm::WorstCase => CriticTarget::WorstCase,
                            _ => CriticTarget::Prime {
                                lambda: lag.lambda,
                                epsilon: cfg.epsilon,
                                v: lag.v,
                            },
                        };
                        let critic = CriticTables::build(mdp, &policy, target)?;
                        exact_critic_gradient(&all, &policy, &critic, gamma, opts)?
                    }
                    Critic::MonteCarlo => {
                        let returns = all
                            .iter()
                            .map(|e| {
                                let aug = augment_episode(e, lag.lambda, cfg.epsilon, lag.v, gamma)?;
                                let c_prime: Vec<f64> = aug.steps.iter().map(|s| s.c_prime).collect();
                                Ok(returns_to_go(&c_prime, gamma))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        monte_carlo_gradient(&all, &returns, &policy, gamma, opts, true)
                    }
                };
                (g, all.len())
            }
        };
        check_finite(i, "policy gradient", &direction)?;
        policy.apply_step(&direction, -cfg.alpha_theta);

        let dm = risk::dprime_mean(&samples, lag.v);
        let violation = cfg.zeta.map(|_| risk::grad_lambda(&lag, dm));
        if constrained {
            let gv = risk::grad_v(&lag, risk::indicator_mean(&samples, lag.v));
            let gl = risk::grad_lambda(&lag, dm);
            lag = risk::update_v_lambda(&lag, gv, gl);
            check_finite(i, "v or lambda", &[lag.v, lag.lambda])?;
        }
        records.push(IterationRecord {
            iteration: i,
            soft_robust_loss: samples.mean(),
            cvar: risk::cvar_epsilon(&samples, cfg.epsilon)?,
            v: lag.v,
            lambda: lag.lambda,
            constraint_violation: violation,
            used_episodes: used,
        });
    }
    Ok((
        policy,
        TrainingReport {
            algorithm: cfg.algorithm,
            records,
            initial_v: v0,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

fn train_as(expected: Algorithm, mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    if cfg.algorithm != expected {
        return Err(Error::schema(
            "trainer.algorithm",
            format!("expected {}, got {}", expected.name(), cfg.algorithm.name()),
        ));
    }
    train(mdp, policy0, cfg)
}

pub fn oc3_train(mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    train_as(Algorithm::Oc3, mdp, policy0, cfg)
}

pub fn soft_robust_train(mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    train_as(Algorithm::SoftRobust, mdp, policy0, cfg)
}

pub fn worst_case_train(mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    train_as(Algorithm::WorstCase, mdp, policy0, cfg)
}

pub fn eoopt_train(mdp: &RobustMdp, policy0: &OptionPolicySet, cfg: &TrainerConfig) -> Result<(OptionPolicySet, TrainingReport)> {
    train_as(Algorithm::EoOpt, mdp, policy0, cfg)
}

/// Action distribution at `s` when an option is freshly selected there.
pub fn first_step_action_probs(policy: &OptionPolicySet, s: usize) -> Vec<f64> {
    let mut out = vec![0.0; policy.n_actions()];
    for (o, po) in policy.pi_over(s).iter().enumerate() {
        for (a, pa) in policy.pi_intra(o, s).iter().enumerate() {
            out[a] += po * pa;
        }
    }
    out
}
