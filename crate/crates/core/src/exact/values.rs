//! Backward induction for option value functions.
//!
//! With `U(s', ω) = (1 − β_ω(s')) Q_Ω(s', ω) + β_ω(s') V(s')` the recursions are
//!
//! ```text
//! Q_ω(s, ω, a) = Σ P(s', c | s, a) (c + γ U(s', ω))
//! Q_Ω(s, ω)    = Σ_a π_ω(a|s) Q_ω(s, ω, a)
//! V(s)         = Σ_ω π_Ω(ω|s) Q_Ω(s, ω)
//! ```
//!
//! and `U` is zero once the episode has ended.

use crate::error::Result;
use crate::exact::graph::{average_node, LayeredGraph};
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::RobustMdp;

/// Values on the nodes of a [`LayeredGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeValues {
    /// `[node][option][action]`
    pub q_omega: Vec<Vec<Vec<f64>>>,
    /// `[node][option]`
    pub q_over: Vec<Vec<f64>>,
    /// `[node]`
    pub v: Vec<f64>,
    /// `[node][option]`, the value on arrival with `ω` still active.
    pub q_beta: Vec<Vec<f64>>,
}

impl NodeValues {
    fn zeros(n: usize, n_o: usize, n_a: usize) -> Self {
        Self {
            q_omega: vec![vec![vec![0.0; n_a]; n_o]; n],
            q_over: vec![vec![0.0; n_o]; n],
            v: vec![0.0; n],
            q_beta: vec![vec![0.0; n_o]; n],
        }
    }

    /// `𝔼[V(s₀)]` under the graph's start distribution.
    pub fn initial_value(&self, graph: &LayeredGraph) -> f64 {
        graph.initial.iter().map(|&(n, p)| p * self.v[n]).sum()
    }

    fn finish_node(&mut self, n: usize, s: usize, policy: &OptionPolicySet) {
        let n_o = policy.n_options();
        for o in 0..n_o {
            let pi = policy.pi_intra(o, s);
            self.q_over[n][o] = pi.iter().zip(&self.q_omega[n][o]).map(|(p, q)| p * q).sum();
        }
        let pi_over = policy.pi_over(s);
        self.v[n] = pi_over.iter().zip(&self.q_over[n]).map(|(p, q)| p * q).sum();
        for o in 0..n_o {
            let b = policy.beta(o, s);
            self.q_beta[n][o] = (1.0 - b) * self.q_over[n][o] + b * self.v[n];
        }
    }
}

/// Backward induction over any layered graph.
pub fn graph_values(graph: &LayeredGraph, policy: &OptionPolicySet) -> NodeValues {
    let (n_o, n_a) = (policy.n_options(), policy.n_actions());
    let gamma = graph.discount;
    let mut vals = NodeValues::zeros(graph.len(), n_o, n_a);
    for n in (0..graph.len()).rev() {
        let node = &graph.nodes[n];
        if node.actions.is_empty() {
            continue;
        }
        for o in 0..n_o {
            for (a, row) in node.actions.iter().enumerate() {
                let mut q = 0.0;
                for e in row {
                    let cont = e.target.map_or(0.0, |m| vals.q_beta[m][o]);
                    q += e.prob * (e.cost + gamma * cont);
                }
                vals.q_omega[n][o][a] = q;
            }
        }
        vals.finish_node(n, node.state, policy);
    }
    vals
}

/// Per-parameter and parameter-averaged option values, indexed by time.
///
/// `p` indexes the parameter of the *current* state; onward values average
/// over the independent parameters of later states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    /// `[t][s][ω][a][p]`
    pub q_omega: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    /// `[t][s][ω][p]`
    pub q_over: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[t][s][ω][p]`
    pub q_beta: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[t][s][p]`
    pub v: Vec<Vec<Vec<f64>>>,
    /// `[t][s][ω][a]`
    pub avg_q_omega: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[t][s][ω]`
    pub avg_q_over: Vec<Vec<Vec<f64>>>,
    /// `[t][s][ω]`
    pub avg_q_beta: Vec<Vec<Vec<f64>>>,
    /// `[t][s]`
    pub avg_v: Vec<Vec<f64>>,
}

impl ValueTables {
    /// `Σ_s ℙ₀(s) Σ_p ℙ_s(p) V(0, s, p)`.
    pub fn soft_robust_loss(&self, mdp: &RobustMdp) -> f64 {
        mdp.initial()
            .iter()
            .enumerate()
            .map(|(s, &w)| {
                let ps = mdp.params(s);
                w * ps.probs().iter().zip(&self.v[0][s]).map(|(p, v)| p * v).sum::<f64>()
            })
            .sum()
    }
}

/// Per-parameter tables by backward induction on the robust MDP itself.
pub fn dp_values(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<ValueTables> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let (horizon, n_s, n_o, n_a) = (mdp.horizon(), mdp.n_states(), policy.n_options(), mdp.n_actions());
    let gamma = mdp.discount();
    let np = |s: usize| mdp.params(s).len();
    let mut out = ValueTables {
        q_omega: (0..horizon).map(|_| (0..n_s).map(|s| vec![vec![vec![0.0; np(s)]; n_a]; n_o]).collect()).collect(),
        q_over: (0..horizon).map(|_| (0..n_s).map(|s| vec![vec![0.0; np(s)]; n_o]).collect()).collect(),
        q_beta: (0..horizon).map(|_| (0..n_s).map(|s| vec![vec![0.0; np(s)]; n_o]).collect()).collect(),
        v: (0..horizon).map(|_| (0..n_s).map(|s| vec![0.0; np(s)]).collect()).collect(),
        avg_q_omega: vec![vec![vec![vec![0.0; n_a]; n_o]; n_s]; horizon],
        avg_q_over: vec![vec![vec![0.0; n_o]; n_s]; horizon],
        avg_q_beta: vec![vec![vec![0.0; n_o]; n_s]; horizon],
        avg_v: vec![vec![0.0; n_s]; horizon],
    };
    for t in (0..horizon).rev() {
        for s in 0..n_s {
            if mdp.is_terminal(s) {
                continue;
            }
            let pi_over = policy.pi_over(s);
            for p in 0..np(s) {
                for o in 0..n_o {
                    let pi = policy.pi_intra(o, s);
                    let mut q_over = 0.0;
                    for a in 0..n_a {
                        let mut q = 0.0;
                        for oc in mdp.outcomes(s, a, p)? {
                            let cont = if t + 1 < horizon && !mdp.is_terminal(oc.next) {
                                out.avg_q_beta[t + 1][oc.next][o]
                            } else {
                                0.0
                            };
                            q += oc.prob * (oc.cost + gamma * cont);
                        }
                        out.q_omega[t][s][o][a][p] = q;
                        q_over += pi[a] * q;
                    }
                    out.q_over[t][s][o][p] = q_over;
                }
                out.v[t][s][p] = (0..n_o).map(|o| pi_over[o] * out.q_over[t][s][o][p]).sum();
                for o in 0..n_o {
                    let b = policy.beta(o, s);
                    out.q_beta[t][s][o][p] = (1.0 - b) * out.q_over[t][s][o][p] + b * out.v[t][s][p];
                }
            }
            let w = mdp.params(s).probs();
            let avg = |xs: &[f64]| xs.iter().zip(w).map(|(x, p)| x * p).sum::<f64>();
            for o in 0..n_o {
                for a in 0..n_a {
                    out.avg_q_omega[t][s][o][a] = avg(&out.q_omega[t][s][o][a]);
                }
                out.avg_q_over[t][s][o] = avg(&out.q_over[t][s][o]);
                out.avg_q_beta[t][s][o] = avg(&out.q_beta[t][s][o]);
            }
            out.avg_v[t][s] = avg(&out.v[t][s]);
        }
    }
    Ok(out)
}

/// Pessimistic values: every backup takes the loss-maximizing parameter of the
/// current state. Indexed like [`average_graph`](crate::exact::graph::average_graph).
pub fn robust_values(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<NodeValues> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let (horizon, n_s, n_o, n_a) = (mdp.horizon(), mdp.n_states(), policy.n_options(), mdp.n_actions());
    let gamma = mdp.discount();
    let mut vals = NodeValues::zeros(horizon * n_s, n_o, n_a);
    for t in (0..horizon).rev() {
        for s in 0..n_s {
            if mdp.is_terminal(s) {
                continue;
            }
            let n = average_node(mdp, t, s);
            for o in 0..n_o {
                for a in 0..n_a {
                    let mut worst = f64::NEG_INFINITY;
                    for p in 0..mdp.params(s).len() {
                        let mut q = 0.0;
                        for oc in mdp.outcomes(s, a, p)? {
                            let cont = if t + 1 < horizon && !mdp.is_terminal(oc.next) {
                                vals.q_beta[average_node(mdp, t + 1, oc.next)][o]
                            } else {
                                0.0
                            };
                            q += oc.prob * (oc.cost + gamma * cont);
                        }
                        worst = worst.max(q);
                    }
                    vals.q_omega[n][o][a] = worst;
                }
            }
            vals.finish_node(n, s, policy);
        }
    }
    Ok(vals)
}
