//! Finite robust MDPs with rectangular (per-state) parameter uncertainty.
//!
//! Every non-terminal state `s` owns a finite parameter set `P_s` with a
//! probability mass `ℙ_s`. The joint outcome kernel maps `(s, a, p_s)` to a
//! finite list of `(next state, cost, probability)` triples, which covers both
//! the transition `T_p(s, a)` and the cost distribution `ℂ(s, a)`.
//!
//! Episodes end on entering a terminal state or after `horizon` actions.
//! Terminal states emit no cost of their own.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall back to the last atom with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// `γ^0, γ^1, …, γ^(n-1)` by repeated multiplication.
///
/// All loss accumulation in the crate uses these exact powers so that
/// running losses computed along different code paths are bitwise equal.
pub fn discount_powers(gamma: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut g = 1.0;
    for _ in 0..n {
        out.push(g);
        g *= gamma;
    }
    out
}

/// Discounted loss `Σ γ^t c_t`.
pub fn trajectory_loss(costs: &[f64], gamma: f64) -> f64 {
    let mut loss = 0.0;
    let mut g = 1.0;
    for &c in costs {
        loss += g * c;
        g *= gamma;
    }
    loss
}

/// Declarative description of a parameter distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDistSpec {
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Realized as `grid_n` equi-spaced points on `[low, high]` carrying
    /// renormalized Gaussian density.
    TruncatedGaussian {
        mean: f64,
        std: f64,
        low: f64,
        high: f64,
        #[serde(default = "default_grid_n")]
        grid_n: usize,
    },
}

fn default_grid_n() -> usize {
    9
}

impl ParamDistSpec {
    pub fn point(value: f64) -> Self {
        ParamDistSpec::Discrete {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn realize(&self) -> Result<ParamSet> {
        match self {
            ParamDistSpec::Discrete { values, probs } => ParamSet::new(values.clone(), probs.clone()),
            &ParamDistSpec::TruncatedGaussian {
                mean,
                std,
                low,
                high,
                grid_n,
            } => {
                if !(low < high) || !(std > 0.0) || grid_n < 2 {
                    return Err(Error::InvalidModel(format!(
                        "truncated gaussian needs low < high, std > 0, grid_n >= 2 (got low={low}, high={high}, std={std}, grid_n={grid_n})"
                    )));
                }
                let step = (high - low) / (grid_n - 1) as f64;
                let values: Vec<f64> = (0..grid_n)
                    .map(|i| if i + 1 == grid_n { high } else { low + step * i as f64 })
                    .collect();
                let dens: Vec<f64> = values
                    .iter()
                    .map(|x| {
                        let z = (x - mean) / std;
                        (-0.5 * z * z).exp()
                    })
                    .collect();
                let total: f64 = dens.iter().sum();
                ParamSet::new(values, dens.iter().map(|d| d / total).collect())
            }
        }
    }
}

/// A realized finite parameter set `P_s` with its mass `ℙ_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl ParamSet {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::InvalidModel(format!(
                "parameter set needs matching non-empty values/probs (got {} and {})",
                values.len(),
                probs.len()
            )));
        }
        check_distribution(&probs, "parameter distribution")?;
        Ok(Self { values, probs })
    }

    pub fn point(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.values.iter().position(|v| (v - value).abs() <= 1e-12)
    }

    /// Index of a parameter drawn from `ℙ_s`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.probs, rng)
    }

    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[self.sample(rng)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// Same support, all mass on `index`.
    pub fn degenerate_at(&self, index: usize) -> Self {
        let mut probs = vec![0.0; self.len()];
        probs[index] = 1.0;
        Self {
            values: self.values.clone(),
            probs,
        }
    }
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.iter().any(|p| !(0.0..=1.0).contains(p) || !p.is_finite()) {
        return Err(Error::InvalidModel(format!("{what}: probability outside [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL * (1.0 + probs.len() as f64) {
        return Err(Error::InvalidModel(format!("{what}: probabilities sum to {sum}")));
    }
    Ok(())
}

/// One atom of the joint `(next state, cost)` kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: usize,
    pub cost: f64,
    pub prob: f64,
}

impl Outcome {
    pub fn new(next: usize, cost: f64, prob: f64) -> Self {
        Self { next, cost, prob }
    }
}

/// The pieces of a robust MDP before validation.
#[derive(Debug, Clone)]
pub struct RobustMdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub params: Vec<ParamSet>,
    /// `kernel[s][a][p]`; may be empty for terminal states.
    pub kernel: Vec<Vec<Vec<Vec<Outcome>>>>,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
    pub discount: f64,
    pub horizon: usize,
    pub cost_bound: f64,
    pub state_names: Option<Vec<String>>,
}

/// Finite robust MDP. Immutable after construction.
#[derive(Debug, Clone)]
pub struct RobustMdp {
    n_states: usize,
    n_actions: usize,
    params: Vec<ParamSet>,
    kernel: Vec<Vec<Vec<Vec<Outcome>>>>,
    initial: Vec<f64>,
    terminal: Vec<bool>,
    discount: f64,
    horizon: usize,
    cost_bound: f64,
    state_names: Option<Vec<String>>,
}

impl RobustMdp {
    pub fn new(parts: RobustMdpParts) -> Result<Self> {
        let RobustMdpParts {
            n_states,
            n_actions,
            params,
            kernel,
            initial,
            terminal,
            discount,
            horizon,
            cost_bound,
            state_names,
        } = parts;
        let bad = |m: String| Err(Error::InvalidModel(m));
        if n_states == 0 || n_actions == 0 {
            return bad("need at least one state and one action".into());
        }
        if params.len() != n_states || kernel.len() != n_states || terminal.len() != n_states || initial.len() != n_states {
            return bad("per-state tables must have one entry per state".into());
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return bad(format!("discount must lie in (0, 1], got {discount}"));
        }
        if horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(cost_bound >= 0.0) {
            return bad(format!("cost bound must be non-negative, got {cost_bound}"));
        }
        check_distribution(&initial, "initial distribution")?;
        if initial.iter().zip(&terminal).any(|(&p, &t)| t && p > 0.0) {
            return bad("initial distribution puts mass on a terminal state".into());
        }
        if let Some(names) = &state_names {
            if names.len() != n_states {
                return bad("state_names must have one entry per state".into());
            }
        }
        for s in 0..n_states {
            if terminal[s] {
                continue;
            }
            if kernel[s].len() != n_actions {
                return bad(format!("state {s}: kernel needs {n_actions} actions"));
            }
            for a in 0..n_actions {
                if kernel[s][a].len() != params[s].len() {
                    return bad(format!("state {s} action {a}: kernel needs one row per parameter"));
                }
                for (p, row) in kernel[s][a].iter().enumerate() {
                    if row.is_empty() {
                        return bad(format!("state {s} action {a} param {p}: empty outcome row"));
                    }
                    for o in row {
                        if o.next >= n_states {
                            return bad(format!("state {s} action {a}: next state {} out of range", o.next));
                        }
                        if !o.cost.is_finite() || o.cost.abs() > cost_bound {
                            return bad(format!("state {s} action {a}: cost {} exceeds bound {cost_bound}", o.cost));
                        }
                    }
                    let probs: Vec<f64> = row.iter().map(|o| o.prob).collect();
                    check_distribution(&probs, &format!("kernel row (s={s}, a={a}, p={p})"))?;
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            params,
            kernel,
            initial,
            terminal,
            discount,
            horizon,
            cost_bound,
            state_names,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cost_bound(&self) -> f64 {
        self.cost_bound
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn params(&self, s: usize) -> &ParamSet {
        &self.params[s]
    }

    pub fn state_name(&self, s: usize) -> String {
        match &self.state_names {
            Some(n) => n[s].clone(),
            None => s.to_string(),
        }
    }

    /// The outcome row for `(s, a, p)`.
    pub fn outcomes(&self, s: usize, a: usize, p: usize) -> Result<&[Outcome]> {
        let len = self.params[s].len();
        if p >= len {
            return Err(Error::ParameterDomain { state: s, index: p, len });
        }
        if self.terminal[s] {
            return Err(Error::Domain(format!("state {s} is terminal")));
        }
        Ok(&self.kernel[s][a][p])
    }

    /// Samples `(s_next, cost)` under parameter index `p` of state `s`.
    pub fn step<R: Rng + ?Sized>(&self, p: usize, s: usize, a: usize, rng: &mut R) -> Result<(usize, f64)> {
        let row = self.outcomes(s, a, p)?;
        let probs: Vec<f64> = row.iter().map(|o| o.prob).collect();
        let o = row[sample_categorical(&probs, rng)];
        Ok((o.next, o.cost))
    }

    /// `T_p(s, a)` as a dense probability vector.
    pub fn transition(&self, s: usize, a: usize, p: usize) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.n_states];
        for o in self.outcomes(s, a, p)? {
            row[o.next] += o.prob;
        }
        Ok(row)
    }

    /// `Σ_p ℙ_s(p) T_p(s, a)`.
    pub fn average_transition(&self, s: usize, a: usize) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.n_states];
        for (p, &w) in self.params[s].probs().iter().enumerate() {
            for o in self.outcomes(s, a, p)? {
                row[o.next] += w * o.prob;
            }
        }
        Ok(row)
    }

    /// Joint outcome atoms of the averaged kernel, merging equal `(next, cost)` pairs.
    pub fn average_outcomes(&self, s: usize, a: usize) -> Result<Vec<Outcome>> {
        let mut merged: Vec<Outcome> = Vec::new();
        for (p, &w) in self.params[s].probs().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for o in self.outcomes(s, a, p)? {
                match merged
                    .iter_mut()
                    .find(|m| m.next == o.next && m.cost.to_bits() == o.cost.to_bits())
                {
                    Some(m) => m.prob += w * o.prob,
                    None => merged.push(Outcome::new(o.next, o.cost, w * o.prob)),
                }
            }
        }
        Ok(merged)
    }

    /// Expected immediate cost of `(s, a)` under parameter `p`.
    pub fn expected_cost(&self, s: usize, a: usize, p: usize) -> Result<f64> {
        Ok(self.outcomes(s, a, p)?.iter().map(|o| o.prob * o.cost).sum())
    }

    /// Copy with `ℙ_s` replaced by a point mass wherever `P_s` contains `value`.
    ///
    /// States whose parameter set does not contain the value keep their distribution.
    pub fn condition_on_value(&self, value: f64) -> Self {
        let mut out = self.clone();
        for ps in out.params.iter_mut() {
            if ps.len() > 1 {
                if let Some(i) = ps.index_of(value) {
                    *ps = ps.degenerate_at(i);
                }
            }
        }
        out
    }

    /// Copy with `ℙ_s` replaced by a point mass on index `assignment[s]` for every state.
    pub fn fix_params(&self, assignment: &[usize]) -> Result<Self> {
        if assignment.len() != self.n_states {
            return Err(Error::Domain("parameter assignment needs one index per state".into()));
        }
        let mut out = self.clone();
        for (s, (&i, ps)) in assignment.iter().zip(out.params.iter_mut()).enumerate() {
            if i >= ps.len() {
                return Err(Error::ParameterDomain { state: s, index: i, len: ps.len() });
            }
            *ps = ps.degenerate_at(i);
        }
        Ok(out)
    }

    /// Sorted distinct values over all parameter sets with more than one element.
    pub fn uncertain_values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = self
            .params
            .iter()
            .filter(|ps| ps.len() > 1)
            .flat_map(|ps| ps.values().iter().copied())
            .collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        vals
    }

    /// Samples a start state from `ℙ₀`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }
}

/// One executed step of a call-and-return episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    /// Option active before the termination check; `None` at the first step.
    pub prev_option: Option<usize>,
    /// Whether `β_prev(state)` fired (always false at the first step).
    pub terminated_option: bool,
    /// Whether `π_Ω` was sampled at this step.
    pub selected: bool,
    pub option: usize,
    pub action: usize,
    pub cost: f64,
    pub next_state: usize,
    pub param: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<StepRecord>,
}

impl Episode {
    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }

    pub fn loss(&self, gamma: f64) -> f64 {
        trajectory_loss(&self.costs(), gamma)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub episodes: Vec<Episode>,
    pub seed: u64,
    pub discount: f64,
}

impl TrajectoryBatch {
    pub fn losses(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.loss(self.discount)).collect()
    }

    /// Checks the batch against the horizon and cost bound of `mdp`.
    pub fn validate(&self, mdp: &RobustMdp) -> Result<()> {
        for (k, e) in self.episodes.iter().enumerate() {
            if e.len() > mdp.horizon() {
                return Err(Error::Domain(format!("episode {k} is longer than the horizon")));
            }
            if e.steps.iter().any(|s| s.cost.abs() > mdp.cost_bound()) {
                return Err(Error::Domain(format!("episode {k} has a cost outside the declared bound")));
            }
        }
        Ok(())
    }
}
