//! The JSON run configuration.
//!
//! A run config is one document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "env": { "name": "two_arm_risk" },
//!   "trainer": { "algorithm": "oc3", "n_iter": 5000, "n_epi": 100, "zeta": 5.0,
//!                "alpha_theta": 1.0, "alpha_v": 0.1, "alpha_lambda": 0.00018 },
//!   "policy": { "n_options": 2, "one_action_per_option": true },
//!   "eval": { "epsilon": 0.1 },
//!   "output_dir": "runs/two_arm",
//!   "seeds": { "count": 20 }
//! }
//! ```
//!
//! Every source of randomness is derived from the per-run seed: training
//! batches use ChaCha8 streams below `2^63` (see [`crate::trainers`]), Monte
//! Carlo evaluation uses streams from [`EVAL_STREAM`] upward and random policy
//! initialization uses stream [`INIT_STREAM`]. `trainer.seed` is overwritten
//! by the run seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{make_env, EnvSpec};
use crate::error::{Error, Result};
use crate::exact::DEFAULT_NODE_BUDGET;
use crate::option_policy::{OptionPolicySet, LOGIT_CLAMP};
use crate::robust_mdp::RobustMdp;
use crate::rollout::{episode_rng, ParamMode};
use crate::trainers::TrainerConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED_COUNT: usize = 20;
pub const EVAL_STREAM: u64 = 1 << 63;
pub const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyInitKind {
    /// All logits zero.
    #[default]
    Uniform,
    /// Logits uniform in `[−scale, scale]`.
    Random { scale: f64 },
}

fn default_n_options() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyInit {
    #[serde(default = "default_n_options")]
    pub n_options: usize,
    #[serde(default)]
    pub init: PolicyInitKind,
    /// Pin option `ω` to action `ω mod |A|` with saturated intra logits.
    #[serde(default)]
    pub one_action_per_option: bool,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self {
            n_options: default_n_options(),
            init: PolicyInitKind::Uniform,
            one_action_per_option: false,
        }
    }
}

impl PolicyInit {
    pub fn build(&self, n_states: usize, n_actions: usize, seed: u64) -> OptionPolicySet {
        let mut policy = match self.init {
            PolicyInitKind::Uniform => OptionPolicySet::uniform(n_states, self.n_options, n_actions),
            PolicyInitKind::Random { scale } => {
                let mut rng = episode_rng(seed, INIT_STREAM);
                OptionPolicySet::random(n_states, self.n_options, n_actions, scale, &mut rng)
            }
        };
        if self.one_action_per_option {
            let sh = policy.shape();
            for o in 0..self.n_options {
                for s in 0..n_states {
                    for a in 0..n_actions {
                        let logit = if a == o % n_actions { LOGIT_CLAMP } else { -LOGIT_CLAMP };
                        policy.set_theta(sh.intra_index(o, s, a), logit);
                    }
                }
            }
        }
        policy
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    /// Enumeration when it fits the node budget, Monte Carlo otherwise.
    #[default]
    Auto,
    Enumeration,
    MonteCarlo,
}

fn default_eval_episodes() -> usize {
    100_000
}
fn default_eval_epsilon() -> f64 {
    0.1
}
fn default_budget() -> usize {
    DEFAULT_NODE_BUDGET
}
fn default_eval_mode() -> ParamMode {
    ParamMode::AveragedKernel
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_episodes")]
    pub n_eval_episodes: usize,
    #[serde(default = "default_eval_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub method: EvalMethod,
    /// Sampling mode for Monte-Carlo evaluation.
    #[serde(default = "default_eval_mode")]
    pub sampling_mode: ParamMode,
    /// Parameter values for the per-parameter sweep; defaults to every uncertain value of the env.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_values: Option<Vec<f64>>,
    #[serde(default = "default_budget")]
    pub node_budget: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_eval_episodes: default_eval_episodes(),
            epsilon: default_eval_epsilon(),
            method: EvalMethod::Auto,
            sampling_mode: default_eval_mode(),
            sweep_values: None,
            node_budget: default_budget(),
        }
    }
}

/// Either an explicit list or `count` seeds `master, master + 1, …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range {
        #[serde(default)]
        master: u64,
        count: usize,
    },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Range {
            master: 0,
            count: DEFAULT_SEED_COUNT,
        }
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { master, count } => (0..*count as u64).map(|k| master.wrapping_add(k)).collect(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub policy: PolicyInit,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seeds: SeedSpec,
}

impl RunConfig {
    pub fn new(env: EnvSpec, trainer: TrainerConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            env,
            trainer,
            policy: PolicyInit::default(),
            eval: EvalConfig::default(),
            output_dir: default_output_dir(),
            seeds: SeedSpec::default(),
        }
    }

    /// Parses and validates; type errors carry the JSON path of the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        self.trainer.validate()?;
        if self.policy.n_options == 0 {
            return Err(Error::schema("policy.n_options", "must be at least 1"));
        }
        if !(self.eval.epsilon > 0.0 && self.eval.epsilon < 1.0) {
            return Err(Error::schema("eval.epsilon", format!("must lie in (0, 1), got {}", self.eval.epsilon)));
        }
        if self.eval.n_eval_episodes == 0 {
            return Err(Error::schema("eval.n_eval_episodes", "must be at least 1"));
        }
        if self.seeds.seeds().is_empty() {
            return Err(Error::schema("seeds", "at least one seed is required"));
        }
        let mdp = make_env(&self.env).map_err(|e| Error::schema("env", e.to_string()))?;
        if let Some(values) = &self.eval.sweep_values {
            let known = mdp.uncertain_values();
            if let Some(v) = values.iter().find(|v| !known.iter().any(|k| (*k - **v).abs() <= 1e-12)) {
                return Err(Error::schema(
                    "eval.sweep_values",
                    format!("{v} is not in the env's parameter set {known:?}"),
                ));
            }
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<RobustMdp> {
        make_env(&self.env)
    }

    /// Trainer config for one run seed.
    pub fn trainer_for(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.trainer.clone()
        }
    }
}
