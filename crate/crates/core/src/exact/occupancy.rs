//! Discounted state-option occupancies.

use crate::error::{Error, Result};
use crate::exact::graph::LayeredGraph;
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::RobustMdp;

/// Discounted visitation masses on graph nodes, each weighted by `γ^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOccupancy {
    /// `[node][ω]`: arrival with `ω` still active, before its termination check.
    pub arrive: Vec<Vec<f64>>,
    /// `[node]`: mass with which `π_Ω` is sampled at the node.
    pub select: Vec<f64>,
    /// `[node][ω]`: mass with which `ω` picks the action at the node.
    pub active: Vec<Vec<f64>>,
}

/// Forward propagation of occupancies.
///
/// With `initial_option = Some(ω₀)` the episode starts with `ω₀` already
/// active; otherwise `ω₀ ∼ π_Ω(·|s₀)`.
pub fn graph_occupancy(graph: &LayeredGraph, policy: &OptionPolicySet, initial_option: Option<usize>) -> NodeOccupancy {
    let n_o = policy.n_options();
    let gamma = graph.discount;
    let n = graph.len();
    let mut occ = NodeOccupancy {
        arrive: vec![vec![0.0; n_o]; n],
        select: vec![0.0; n],
        active: vec![vec![0.0; n_o]; n],
    };
    for &(node, p) in &graph.initial {
        match initial_option {
            Some(o) => occ.active[node][o] += p,
            None => occ.select[node] += p,
        }
    }
    for i in 0..n {
        let node = &graph.nodes[i];
        if node.actions.is_empty() {
            continue;
        }
        let s = node.state;
        for o in 0..n_o {
            occ.select[i] += occ.arrive[i][o] * policy.beta(o, s);
        }
        let pi_over = policy.pi_over(s);
        for o in 0..n_o {
            occ.active[i][o] += occ.arrive[i][o] * (1.0 - policy.beta(o, s)) + occ.select[i] * pi_over[o];
        }
        for o in 0..n_o {
            let mass = occ.active[i][o];
            if mass == 0.0 {
                continue;
            }
            let pi = policy.pi_intra(o, s);
            for (a, row) in node.actions.iter().enumerate() {
                for e in row {
                    if let Some(m) = e.target {
                        occ.arrive[m][o] += gamma * mass * pi[a] * e.prob;
                    }
                }
            }
        }
    }
    occ
}

/// The time-homogeneous discounted kernel over `(s, ω)` pairs and its
/// horizon-truncated sums.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyTables {
    pub n_options: usize,
    /// `one_step[(s, ω)][(s', ω')]`, flattened as `s * |Ω| + ω`.
    pub one_step: Vec<Vec<f64>>,
    /// `Σ_{k < T} ℙ_γ^{(k)}((s, ω) | (s₀, ω₀))`.
    pub d_state_option: Vec<f64>,
    /// `Σ_ω d_state_option(s, ω)`.
    pub d_state: Vec<f64>,
}

impl OccupancyTables {
    pub fn d(&self, s: usize, o: usize) -> f64 {
        self.d_state_option[s * self.n_options + o]
    }
}

/// One-step kernel
/// `γ Σ_a π_ω(a|s) P̄(s'|s,a) [(1 − β_ω(s')) 1(ω = ω') + β_ω(s') π_Ω(ω'|s')]`
/// with transitions into terminal states dropped, then summed over `k < T` steps.
pub fn occupancy(mdp: &RobustMdp, policy: &OptionPolicySet, s0: usize, o0: usize) -> Result<OccupancyTables> {
    occupancy_with_discount(mdp, policy, s0, o0, mdp.discount())
}

/// [`occupancy`] with the discount overridden (`γ = 0` is allowed here).
pub fn occupancy_with_discount(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    s0: usize,
    o0: usize,
    gamma: f64,
) -> Result<OccupancyTables> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let (n_s, n_o) = (mdp.n_states(), policy.n_options());
    if s0 >= n_s || o0 >= n_o || mdp.is_terminal(s0) {
        return Err(Error::Domain(format!("invalid initial condition ({s0}, {o0})")));
    }
    let dim = n_s * n_o;
    let mut one_step = vec![vec![0.0; dim]; dim];
    for s in 0..n_s {
        if mdp.is_terminal(s) {
            continue;
        }
        let avg: Vec<Vec<f64>> = (0..mdp.n_actions())
            .map(|a| mdp.average_transition(s, a))
            .collect::<Result<_>>()?;
        for o in 0..n_o {
            let pi = policy.pi_intra(o, s);
            for sn in 0..n_s {
                if mdp.is_terminal(sn) {
                    continue;
                }
                let reach: f64 = (0..mdp.n_actions()).map(|a| pi[a] * avg[a][sn]).sum();
                if reach == 0.0 {
                    continue;
                }
                let b = policy.beta(o, sn);
                let pi_over = policy.pi_over(sn);
                for on in 0..n_o {
                    let cont = if on == o { 1.0 - b } else { 0.0 };
                    one_step[s * n_o + o][sn * n_o + on] = gamma * reach * (cont + b * pi_over[on]);
                }
            }
        }
    }
    let mut layer = vec![0.0; dim];
    layer[s0 * n_o + o0] = 1.0;
    let mut d = vec![0.0; dim];
    for k in 0..mdp.horizon() {
        for (acc, x) in d.iter_mut().zip(&layer) {
            *acc += x;
        }
        if k + 1 == mdp.horizon() {
            break;
        }
        let mut next = vec![0.0; dim];
        for (i, &mass) in layer.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, &k1) in one_step[i].iter().enumerate() {
                next[j] += mass * k1;
            }
        }
        layer = next;
    }
    let d_state = (0..n_s).map(|s| (0..n_o).map(|o| d[s * n_o + o]).sum()).collect();
    Ok(OccupancyTables {
        n_options: n_o,
        one_step,
        d_state_option: d,
        d_state,
    })
}
