//! Exact dynamic-programming oracle for small robust MDPs.

pub mod enumerate;
pub mod gradients;
pub mod graph;
pub mod occupancy;
pub mod values;

use rand::Rng;

use crate::error::Result;
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::{Outcome, ParamSet, RobustMdp, RobustMdpParts};

pub use enumerate::{enumerate_given_first_param, enumerate_loss_distribution};
pub use gradients::{
    exact_grad_beta, exact_grad_pi_intra, exact_grad_pi_omega_over, graph_objective, prime_gradient,
    soft_robust_gradient, GradientTables, DEFAULT_NODE_BUDGET,
};
pub use graph::{average_graph, average_node, hinge_graph, HingeChannel, LayeredGraph};
pub use occupancy::{graph_occupancy, occupancy, occupancy_with_discount, NodeOccupancy, OccupancyTables};
pub use values::{dp_values, graph_values, robust_values, NodeValues, ValueTables};

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceLimits {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_params: usize,
    pub max_horizon: usize,
    pub max_options: usize,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self {
            max_states: 6,
            max_actions: 3,
            max_params: 3,
            max_horizon: 8,
            max_options: 3,
        }
    }
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // put the rounding residue on the last atom so the row sums to 1 exactly enough
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = 1.0 - head;
    out
}

/// A random robust MDP with integer costs in `{0, 1, 2}` and random option logits.
///
/// The last state is terminal. With `γ < 1` the horizon is capped at 6 so that
/// loss enumeration stays cheap.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, limits: InstanceLimits) -> Result<(RobustMdp, OptionPolicySet)> {
    let n_s = rng.gen_range(3..=limits.max_states.max(3));
    let n_a = rng.gen_range(1..=limits.max_actions.max(1));
    let n_o = rng.gen_range(1..=limits.max_options.max(1));
    let gamma = if rng.gen_bool(0.5) { 1.0 } else { 0.9 };
    let max_h = if gamma < 1.0 { limits.max_horizon.min(6) } else { limits.max_horizon };
    let horizon = rng.gen_range(2..=max_h.max(2));
    let terminal: Vec<bool> = (0..n_s).map(|s| s + 1 == n_s).collect();
    let mut params = Vec::with_capacity(n_s);
    let mut kernel = Vec::with_capacity(n_s);
    for s in 0..n_s {
        if terminal[s] {
            params.push(ParamSet::point(0.0));
            kernel.push(Vec::new());
            continue;
        }
        let n_p = rng.gen_range(1..=limits.max_params.max(1));
        params.push(ParamSet::new((0..n_p).map(|i| i as f64).collect(), random_simplex(n_p, rng))?);
        let mut per_action = Vec::with_capacity(n_a);
        for _ in 0..n_a {
            let mut per_param = Vec::with_capacity(n_p);
            for _ in 0..n_p {
                let k = rng.gen_range(1..=2);
                let probs = random_simplex(k, rng);
                per_param.push(
                    probs
                        .into_iter()
                        .map(|p| Outcome::new(rng.gen_range(0..n_s), rng.gen_range(0..=2) as f64, p))
                        .collect(),
                );
            }
            per_action.push(per_param);
        }
        kernel.push(per_action);
    }
    let mut initial = vec![0.0; n_s];
    if rng.gen_bool(0.5) {
        initial[0] = 1.0;
    } else {
        initial[0] = 0.5;
        initial[1] = 0.5;
    }
    let mdp = RobustMdp::new(RobustMdpParts {
        n_states: n_s,
        n_actions: n_a,
        params,
        kernel,
        initial,
        terminal,
        discount: gamma,
        horizon,
        cost_bound: 2.0,
        state_names: None,
    })?;
    let policy = OptionPolicySet::random(n_s, n_o, n_a, 2.0, rng);
    Ok((mdp, policy))
}
