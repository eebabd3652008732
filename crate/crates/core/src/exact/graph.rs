//! Time-layered decision graphs.
//!
//! A node is a decision point `(t, s, …)`; each action owns a list of edges
//! carrying probability and cost. An edge without a target ends the episode
//! (termination or truncation). Nodes are stored so that every edge points to
//! a strictly larger index, which makes one reverse sweep a full backward
//! induction and one forward sweep a full occupancy propagation.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::robust_mdp::{discount_powers, RobustMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub target: Option<usize>,
    pub prob: f64,
    /// Cost in units local to the source node (not yet discounted by `γ^t`).
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub t: usize,
    pub state: usize,
    /// `actions[a]`; empty for nodes that are never decision points.
    pub actions: Vec<Vec<Edge>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGraph {
    pub nodes: Vec<GraphNode>,
    /// `(node, probability)` pairs for the start distribution.
    pub initial: Vec<(usize, f64)>,
    pub discount: f64,
}

impl LayeredGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[cfg(debug_assertions)]
    fn assert_topological(&self) {
        for (i, n) in self.nodes.iter().enumerate() {
            for row in &n.actions {
                for e in row {
                    if let Some(m) = e.target {
                        debug_assert!(m > i, "edge {i} -> {m} is not forward");
                    }
                }
            }
        }
    }
}

/// Index of node `(t, s)` in [`average_graph`].
pub fn average_node(mdp: &RobustMdp, t: usize, s: usize) -> usize {
    t * mdp.n_states() + s
}

/// The average MDP unrolled over the horizon: one node per `(t, s)`.
///
/// Terminal states get nodes without actions so that indexing stays dense.
pub fn average_graph(mdp: &RobustMdp) -> Result<LayeredGraph> {
    let (n_s, horizon) = (mdp.n_states(), mdp.horizon());
    let mut nodes = Vec::with_capacity(n_s * horizon);
    for t in 0..horizon {
        for s in 0..n_s {
            let mut actions = Vec::new();
            if !mdp.is_terminal(s) {
                for a in 0..mdp.n_actions() {
                    let row = mdp
                        .average_outcomes(s, a)?
                        .into_iter()
                        .map(|o| Edge {
                            target: (t + 1 < horizon && !mdp.is_terminal(o.next)).then(|| average_node(mdp, t + 1, o.next)),
                            prob: o.prob,
                            cost: o.cost,
                        })
                        .collect();
                    actions.push(row);
                }
            }
            nodes.push(GraphNode { t, state: s, actions });
        }
    }
    let initial = mdp
        .initial()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| (average_node(mdp, 0, s), p))
        .collect();
    let g = LayeredGraph {
        nodes,
        initial,
        discount: mdp.discount(),
    };
    #[cfg(debug_assertions)]
    g.assert_topological();
    Ok(g)
}

/// Cost weights of a hinge-augmented channel.
///
/// Each step pays `base_weight · c`; the episode-ending transition also pays
/// `hinge_weight · max(0, 𝒞 − v)` in time-0 units. `(1, λ/ε)` is the `C′`
/// channel and `(0, 1)` is the `C″` channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeChannel {
    pub base_weight: f64,
    pub hinge_weight: f64,
    pub v: f64,
}

impl HingeChannel {
    pub fn prime(lambda: f64, epsilon: f64, v: f64) -> Self {
        Self {
            base_weight: 1.0,
            hinge_weight: lambda / epsilon,
            v,
        }
    }

    pub fn dprime(v: f64) -> Self {
        Self {
            base_weight: 0.0,
            hinge_weight: 1.0,
            v,
        }
    }
}

/// Lookup from `(t, s, running loss)` to node index in a hinge graph.
#[derive(Debug, Clone, Default)]
pub struct HingeIndex {
    map: HashMap<(usize, usize, u64), usize>,
}

impl HingeIndex {
    /// `loss` is the discounted loss accumulated before time `t`, computed with
    /// [`discount_powers`] in step order.
    pub fn get(&self, t: usize, s: usize, loss: f64) -> Option<usize> {
        self.map.get(&(t, s, loss.to_bits())).copied()
    }
}

/// The average MDP with the running loss folded into the node key, so that
/// the terminal hinge is an ordinary edge cost.
pub fn hinge_graph(mdp: &RobustMdp, channel: HingeChannel, budget: usize) -> Result<(LayeredGraph, HingeIndex)> {
    let horizon = mdp.horizon();
    let gamma = mdp.discount();
    let powers = discount_powers(gamma, horizon + 1);
    let mut index = HingeIndex::default();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut losses: Vec<f64> = Vec::new();
    let mut initial = Vec::new();
    for (s, &p) in mdp.initial().iter().enumerate() {
        if p > 0.0 {
            index.map.insert((0, s, 0f64.to_bits()), nodes.len());
            initial.push((nodes.len(), p));
            nodes.push(GraphNode {
                t: 0,
                state: s,
                actions: Vec::new(),
            });
            losses.push(0.0);
        }
    }
    let mut cursor = 0;
    while cursor < nodes.len() {
        let (t, s, loss) = (nodes[cursor].t, nodes[cursor].state, losses[cursor]);
        let mut actions = Vec::with_capacity(mdp.n_actions());
        for a in 0..mdp.n_actions() {
            let mut row = Vec::new();
            for o in mdp.average_outcomes(s, a)? {
                let next_loss = loss + powers[t] * o.cost;
                let ends = t + 1 >= horizon || mdp.is_terminal(o.next);
                let mut cost = channel.base_weight * o.cost;
                let target = if ends {
                    cost += channel.hinge_weight * (next_loss - channel.v).max(0.0) / powers[t];
                    None
                } else {
                    let key = (t + 1, o.next, next_loss.to_bits());
                    let id = match index.map.get(&key) {
                        Some(&id) => id,
                        None => {
                            if nodes.len() >= budget {
                                return Err(Error::EnumerationBudget { budget });
                            }
                            let id = nodes.len();
                            index.map.insert(key, id);
                            nodes.push(GraphNode {
                                t: t + 1,
                                state: o.next,
                                actions: Vec::new(),
                            });
                            losses.push(next_loss);
                            id
                        }
                    };
                    Some(id)
                };
                row.push(Edge {
                    target,
                    prob: o.prob,
                    cost,
                });
            }
            actions.push(row);
        }
        nodes[cursor].actions = actions;
        cursor += 1;
    }
    let g = LayeredGraph {
        nodes,
        initial,
        discount: gamma,
    };
    #[cfg(debug_assertions)]
    g.assert_topological();
    Ok((g, index))
}
