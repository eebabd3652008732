//! Tabular call-and-return options: softmax policy over options, softmax
//! intra-option policies and sigmoid terminations.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust_mdp::sample_categorical;

/// Logits are kept inside this range so that probabilities never hit 0 or 1 exactly.
pub const LOGIT_CLAMP: f64 = 30.0;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|l| l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| (l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP) - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn sigmoid(logit: f64) -> f64 {
    let l = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Shapes of the three parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub n_states: usize,
    pub n_options: usize,
    pub n_actions: usize,
}

impl PolicyShape {
    pub fn over_len(&self) -> usize {
        self.n_states * self.n_options
    }

    pub fn intra_len(&self) -> usize {
        self.n_options * self.n_states * self.n_actions
    }

    pub fn term_len(&self) -> usize {
        self.n_options * self.n_states
    }

    pub fn len(&self) -> usize {
        self.over_len() + self.intra_len() + self.term_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn over_index(&self, s: usize, o: usize) -> usize {
        s * self.n_options + o
    }

    pub fn intra_index(&self, o: usize, s: usize, a: usize) -> usize {
        self.over_len() + (o * self.n_states + s) * self.n_actions + a
    }

    pub fn term_index(&self, o: usize, s: usize) -> usize {
        self.over_len() + self.intra_len() + o * self.n_states + s
    }
}

/// θ laid out as `[over: S×Ω | intra: Ω×S×A | term: Ω×S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionPolicySet {
    shape: PolicyShape,
    theta: Vec<f64>,
    /// `initiation[o][s]`; `None` means every option is available everywhere.
    initiation: Option<Vec<Vec<bool>>>,
}

/// Active option carried between steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OptionExecutionState {
    pub active_option: Option<usize>,
    pub just_terminated: bool,
}

/// Result of one `act` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Act {
    pub option: usize,
    pub action: usize,
    /// Whether `π_Ω` was sampled at this step.
    pub selected: bool,
    /// Whether the previously active option terminated here.
    pub terminated: bool,
    pub exec: OptionExecutionState,
}

/// Log-derivatives for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    /// `∂ log π_Ω(ω|s) / ∂θ_πΩ[s, k]` for every option `k`, present only on selection.
    pub over: Option<Vec<f64>>,
    /// `∂ log π_ω(a|s) / ∂θ_πω[ω, s, j]` for every action `j`.
    pub intra: Vec<f64>,
    /// `∂ β_ω(s) / ∂θ_βω[ω, s]`.
    pub beta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    shape: PolicyShape,
    over: Vec<f64>,
    intra: Vec<f64>,
    term: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initiation: Option<Vec<Vec<bool>>>,
}

impl OptionPolicySet {
    /// All logits zero: uniform choices and `β = 0.5`.
    pub fn uniform(n_states: usize, n_options: usize, n_actions: usize) -> Self {
        let shape = PolicyShape {
            n_states,
            n_options,
            n_actions,
        };
        Self {
            shape,
            theta: vec![0.0; shape.len()],
            initiation: None,
        }
    }

    pub fn from_theta(shape: PolicyShape, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != shape.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                shape.len(),
                theta.len()
            )));
        }
        let mut out = Self {
            shape,
            theta,
            initiation: None,
        };
        out.clamp();
        Ok(out)
    }

    /// Random logits drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_options: usize, n_actions: usize, scale: f64, rng: &mut R) -> Self {
        let mut out = Self::uniform(n_states, n_options, n_actions);
        for t in out.theta.iter_mut() {
            *t = rng.gen_range(-scale..=scale);
        }
        out
    }

    pub fn with_initiation(mut self, initiation: Vec<Vec<bool>>) -> Result<Self> {
        let sh = self.shape;
        if initiation.len() != sh.n_options || initiation.iter().any(|r| r.len() != sh.n_states) {
            return Err(Error::Shape("initiation sets must be options × states".into()));
        }
        for s in 0..sh.n_states {
            if !(0..sh.n_options).any(|o| initiation[o][s]) {
                return Err(Error::Shape(format!("no option can be initiated in state {s}")));
            }
        }
        self.initiation = Some(initiation);
        Ok(self)
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn n_states(&self) -> usize {
        self.shape.n_states
    }

    pub fn n_options(&self) -> usize {
        self.shape.n_options
    }

    pub fn n_actions(&self) -> usize {
        self.shape.n_actions
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn set_theta(&mut self, i: usize, value: f64) {
        self.theta[i] = value.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    }

    /// `θ ← clamp(θ + step · direction)`.
    pub fn apply_step(&mut self, direction: &[f64], step: f64) {
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t += step * d;
        }
        self.clamp();
    }

    fn clamp(&mut self) {
        for t in self.theta.iter_mut() {
            *t = t.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }

    pub fn over_logit(&self, s: usize, o: usize) -> f64 {
        self.theta[self.shape.over_index(s, o)]
    }

    pub fn intra_logit(&self, o: usize, s: usize, a: usize) -> f64 {
        self.theta[self.shape.intra_index(o, s, a)]
    }

    pub fn term_logit(&self, o: usize, s: usize) -> f64 {
        self.theta[self.shape.term_index(o, s)]
    }

    pub fn available(&self, o: usize, s: usize) -> bool {
        self.initiation.as_ref().map_or(true, |m| m[o][s])
    }

    /// `π_Ω(·|s)`, restricted to options whose initiation set contains `s`.
    pub fn pi_over(&self, s: usize) -> Vec<f64> {
        let n = self.shape.n_options;
        let start = self.shape.over_index(s, 0);
        let logits = &self.theta[start..start + n];
        match &self.initiation {
            None => softmax(logits),
            Some(_) => {
                let avail: Vec<usize> = (0..n).filter(|&o| self.available(o, s)).collect();
                let sub: Vec<f64> = avail.iter().map(|&o| logits[o]).collect();
                let probs = softmax(&sub);
                let mut out = vec![0.0; n];
                for (&o, p) in avail.iter().zip(probs) {
                    out[o] = p;
                }
                out
            }
        }
    }

    /// `π_ω(·|s)`.
    pub fn pi_intra(&self, o: usize, s: usize) -> Vec<f64> {
        let start = self.shape.intra_index(o, s, 0);
        softmax(&self.theta[start..start + self.shape.n_actions])
    }

    /// `β_ω(s)`.
    pub fn beta(&self, o: usize, s: usize) -> f64 {
        sigmoid(self.term_logit(o, s))
    }

    /// One call-and-return step: termination check, optional re-selection, then an action.
    pub fn act<R: Rng + ?Sized>(&self, exec: OptionExecutionState, s: usize, rng: &mut R) -> Act {
        let (terminated, keep) = match exec.active_option {
            Some(o) => {
                let fired = rng.gen::<f64>() < self.beta(o, s);
                (fired, if fired { None } else { Some(o) })
            }
            None => (false, None),
        };
        let (option, selected) = match keep {
            Some(o) => (o, false),
            None => (sample_categorical(&self.pi_over(s), rng), true),
        };
        let action = sample_categorical(&self.pi_intra(option, s), rng);
        Act {
            option,
            action,
            selected,
            terminated,
            exec: OptionExecutionState {
                active_option: Some(option),
                just_terminated: terminated,
            },
        }
    }

    pub fn score_gradients(&self, s: usize, o: usize, a: usize, selected: bool) -> ScoreGradients {
        let over = selected.then(|| {
            self.pi_over(s)
                .iter()
                .enumerate()
                .map(|(k, p)| if k == o { 1.0 - p } else { -p })
                .collect()
        });
        let intra = self
            .pi_intra(o, s)
            .iter()
            .enumerate()
            .map(|(j, p)| if j == a { 1.0 - p } else { -p })
            .collect();
        let b = self.beta(o, s);
        ScoreGradients {
            over,
            intra,
            beta: b * (1.0 - b),
        }
    }

    /// `∂ log P(termination outcome) / ∂θ_βω[ω, s]`.
    pub fn termination_score(&self, o: usize, s: usize, terminated: bool) -> f64 {
        let b = self.beta(o, s);
        if terminated {
            1.0 - b
        } else {
            -b
        }
    }

    pub fn check_compatible(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.shape.n_states != n_states || self.shape.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "policy has {} states and {} actions, environment has {n_states} and {n_actions}",
                self.shape.n_states, self.shape.n_actions
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let sh = self.shape;
        let (over, rest) = self.theta.split_at(sh.over_len());
        let (intra, term) = rest.split_at(sh.intra_len());
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            shape: sh,
            over: over.to_vec(),
            intra: intra.to_vec(),
            term: term.to_vec(),
            initiation: self.initiation.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Shape(format!(
                "unsupported checkpoint format version {}",
                ck.format_version
            )));
        }
        let sh = ck.shape;
        if ck.over.len() != sh.over_len() || ck.intra.len() != sh.intra_len() || ck.term.len() != sh.term_len() {
            return Err(Error::Shape("checkpoint tables do not match declared shape".into()));
        }
        let mut theta = ck.over;
        theta.extend(ck.intra);
        theta.extend(ck.term);
        let out = Self::from_theta(sh, theta)?;
        match ck.initiation {
            Some(init) => out.with_initiation(init),
            None => Ok(out),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
