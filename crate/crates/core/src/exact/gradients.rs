//! Closed-form policy gradients of the expected loss on a layered graph.
//!
//! With discounted occupancies from [`graph_occupancy`] and values from
//! [`graph_values`]:
//!
//! ```text
//! ∂/∂θ_πΩ[s, k]    = Σ_{n at s} select(n)    π_Ω(k|s) (Q_Ω(n, k) − V(n))
//! ∂/∂θ_πω[ω, s, j] = Σ_{n at s} active(n, ω) π_ω(j|s) (Q_ω(n, ω, j) − Q_Ω(n, ω))
//! ∂/∂θ_βω[ω, s]    = Σ_{n at s} arrive(n, ω) β(1 − β)  (V(n) − Q_Ω(n, ω))
//! ```

use crate::error::Result;
use crate::exact::graph::{average_graph, hinge_graph, HingeChannel, LayeredGraph};
use crate::exact::occupancy::{graph_occupancy, NodeOccupancy};
use crate::exact::values::{graph_values, NodeValues};
use crate::option_policy::{OptionPolicySet, PolicyShape};
use crate::robust_mdp::RobustMdp;

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

/// Gradient split into the three parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTables {
    pub shape: PolicyShape,
    /// Flat gradient in θ layout.
    pub flat: Vec<f64>,
}

impl GradientTables {
    pub fn pi_over(&self) -> &[f64] {
        &self.flat[..self.shape.over_len()]
    }

    pub fn pi_intra(&self) -> &[f64] {
        let start = self.shape.over_len();
        &self.flat[start..start + self.shape.intra_len()]
    }

    pub fn beta(&self) -> &[f64] {
        &self.flat[self.shape.over_len() + self.shape.intra_len()..]
    }
}

pub fn graph_gradients(
    graph: &LayeredGraph,
    policy: &OptionPolicySet,
    values: &NodeValues,
    occ: &NodeOccupancy,
) -> GradientTables {
    let sh = policy.shape();
    let mut g = vec![0.0; sh.len()];
    for (n, node) in graph.nodes.iter().enumerate() {
        if node.actions.is_empty() {
            continue;
        }
        let s = node.state;
        let pi_over = policy.pi_over(s);
        for k in 0..sh.n_options {
            g[sh.over_index(s, k)] += occ.select[n] * pi_over[k] * (values.q_over[n][k] - values.v[n]);
        }
        for o in 0..sh.n_options {
            let pi = policy.pi_intra(o, s);
            for j in 0..sh.n_actions {
                g[sh.intra_index(o, s, j)] += occ.active[n][o] * pi[j] * (values.q_omega[n][o][j] - values.q_over[n][o]);
            }
            let b = policy.beta(o, s);
            g[sh.term_index(o, s)] += occ.arrive[n][o] * b * (1.0 - b) * (values.v[n] - values.q_over[n][o]);
        }
    }
    GradientTables { shape: sh, flat: g }
}

/// Value and gradient of an expected loss defined by a graph.
pub fn graph_objective(graph: &LayeredGraph, policy: &OptionPolicySet) -> (f64, GradientTables) {
    let values = graph_values(graph, policy);
    let occ = graph_occupancy(graph, policy, None);
    (values.initial_value(graph), graph_gradients(graph, policy, &values, &occ))
}

/// Gradient of the soft robust loss `Σ_p ℙ(p) 𝔼[𝒞 | p]`.
pub fn soft_robust_gradient(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<GradientTables> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    Ok(graph_objective(&average_graph(mdp)?, policy).1)
}

/// Gradient of `Σ_p ℙ(p) 𝔼[𝒞′ | p]` for fixed `(λ, ε, v)`.
pub fn prime_gradient(mdp: &RobustMdp, policy: &OptionPolicySet, lambda: f64, epsilon: f64, v: f64) -> Result<GradientTables> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let (graph, _) = hinge_graph(mdp, HingeChannel::prime(lambda, epsilon, v), DEFAULT_NODE_BUDGET)?;
    Ok(graph_objective(&graph, policy).1)
}

/// Policy-over-options block of the soft robust gradient.
pub fn exact_grad_pi_omega_over(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<Vec<f64>> {
    Ok(soft_robust_gradient(mdp, policy)?.pi_over().to_vec())
}

/// Intra-option block of the soft robust gradient.
pub fn exact_grad_pi_intra(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<Vec<f64>> {
    Ok(soft_robust_gradient(mdp, policy)?.pi_intra().to_vec())
}

/// Termination block of the soft robust gradient.
pub fn exact_grad_beta(mdp: &RobustMdp, policy: &OptionPolicySet) -> Result<Vec<f64>> {
    Ok(soft_robust_gradient(mdp, policy)?.beta().to_vec())
}
