//! Sample estimators of the option policy gradients.
//!
//! Both estimators return the gradient of an expected loss (so a descent step
//! subtracts them) in the flat θ layout of [`OptionPolicySet`].

use crate::error::Result;
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::{discount_powers, Episode};
use crate::trainers::critic::CriticTables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorOptions {
    /// Weight step `t` by `γ^t`, as in the occupancy-weighted gradient.
    pub discount_weighting: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            discount_weighting: true,
        }
    }
}

fn step_weights(gamma: f64, n: usize, opts: EstimatorOptions) -> Vec<f64> {
    if opts.discount_weighting {
        discount_powers(gamma, n)
    } else {
        vec![1.0; n]
    }
}

/// Expected-form estimator with exact advantages.
///
/// For every step `t` at critic node `n`:
/// - on selection, `γ^t ∇log π_Ω(ω|s) (Q_Ω(n, ω) − V(n))`;
/// - always, `γ^t ∇log π_ω(a|s) (Q_ω(n, ω, a) − Q_Ω(n, ω))`;
/// - for `t ≥ 1` with `ω_prev` arriving, `γ^t β(1 − β) (V(n) − Q_Ω(n, ω_prev))`.
///
/// Returns the mean over `episodes`.
pub fn exact_critic_gradient(
    episodes: &[&Episode],
    policy: &OptionPolicySet,
    critic: &CriticTables,
    gamma: f64,
    opts: EstimatorOptions,
) -> Result<Vec<f64>> {
    let sh = policy.shape();
    let mut g = vec![0.0; sh.len()];
    let horizon = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    let weights = step_weights(gamma, horizon, opts);
    let powers = discount_powers(gamma, horizon);
    let vals = &critic.values;
    for ep in episodes {
        let mut loss = 0.0;
        for (t, st) in ep.steps.iter().enumerate() {
            let n = critic.node(t, st.state, loss)?;
            let w = weights[t];
            let s = st.state;
            let o = st.option;
            let sc = policy.score_gradients(s, o, st.action, st.selected);
            if let Some(over) = &sc.over {
                let adv = vals.q_over[n][o] - vals.v[n];
                for (k, d) in over.iter().enumerate() {
                    g[sh.over_index(s, k)] += w * d * adv;
                }
            }
            let adv = vals.q_omega[n][o][st.action] - vals.q_over[n][o];
            for (j, d) in sc.intra.iter().enumerate() {
                g[sh.intra_index(o, s, j)] += w * d * adv;
            }
            if let Some(prev) = st.prev_option {
                let b = policy.beta(prev, s);
                g[sh.term_index(prev, s)] += w * b * (1.0 - b) * (vals.v[n] - vals.q_over[n][prev]);
            }
            loss += powers[t] * st.cost;
        }
    }
    let n = episodes.len().max(1) as f64;
    Ok(g.into_iter().map(|x| x / n).collect())
}

/// Per-step returns `G_t = Σ_{k ≥ t} γ^{k−t} c_k` of a cost sequence.
pub fn returns_to_go(costs: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; costs.len()];
    let mut acc = 0.0;
    for t in (0..costs.len()).rev() {
        acc = costs[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// REINFORCE estimator with Monte-Carlo returns.
///
/// `returns[k][t]` is the return from step `t` of episode `k` on the channel
/// being optimized. With `baseline = true` the mean return of the supplied
/// episodes at the same `(t, s)` is subtracted.
pub fn monte_carlo_gradient(
    episodes: &[&Episode],
    returns: &[Vec<f64>],
    policy: &OptionPolicySet,
    gamma: f64,
    opts: EstimatorOptions,
    baseline: bool,
) -> Vec<f64> {
    let sh = policy.shape();
    let horizon = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    let weights = step_weights(gamma, horizon, opts);
    let mut base = vec![vec![0.0; sh.n_states]; horizon];
    if baseline {
        let mut count = vec![vec![0usize; sh.n_states]; horizon];
        for (ep, ret) in episodes.iter().zip(returns) {
            for (t, st) in ep.steps.iter().enumerate() {
                base[t][st.state] += ret[t];
                count[t][st.state] += 1;
            }
        }
        for (row, crow) in base.iter_mut().zip(&count) {
            for (b, &c) in row.iter_mut().zip(crow) {
                if c > 0 {
                    *b /= c as f64;
                }
            }
        }
    }
    let mut g = vec![0.0; sh.len()];
    for (ep, ret) in episodes.iter().zip(returns) {
        for (t, st) in ep.steps.iter().enumerate() {
            let s = st.state;
            let o = st.option;
            let adv = ret[t] - base[t][s];
            let w = weights[t] * adv;
            let sc = policy.score_gradients(s, o, st.action, st.selected);
            if let Some(over) = &sc.over {
                for (k, d) in over.iter().enumerate() {
                    g[sh.over_index(s, k)] += w * d;
                }
            }
            for (j, d) in sc.intra.iter().enumerate() {
                g[sh.intra_index(o, s, j)] += w * d;
            }
            if let Some(prev) = st.prev_option {
                g[sh.term_index(prev, s)] += w * policy.termination_score(prev, s, st.terminated_option);
            }
        }
    }
    let n = episodes.len().max(1) as f64;
    g.into_iter().map(|x| x / n).collect()
}
