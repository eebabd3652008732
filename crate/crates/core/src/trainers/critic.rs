//! Exact critics recomputed from the current policy.

use crate::error::{Error, Result};
use crate::exact::graph::{average_graph, hinge_graph, HingeChannel, HingeIndex};
use crate::exact::values::{graph_values, robust_values, NodeValues};
use crate::exact::DEFAULT_NODE_BUDGET;
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::RobustMdp;

/// Which loss the critic evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticTarget {
    /// `𝒞` on the average MDP.
    SoftRobust,
    /// `𝒞′ = 𝒞 + λ max(0, 𝒞 − v)/ε` on the average MDP.
    Prime { lambda: f64, epsilon: f64, v: f64 },
    /// `𝒞` with the loss-maximizing parameter at every backup.
    WorstCase,
}

#[derive(Debug, Clone)]
enum Layout {
    Average { n_states: usize },
    Hinge(HingeIndex),
}

/// Node values plus a lookup from sampled `(t, s, running loss)` to nodes.
#[derive(Debug, Clone)]
pub struct CriticTables {
    pub values: NodeValues,
    layout: Layout,
}

impl CriticTables {
    pub fn build(mdp: &RobustMdp, policy: &OptionPolicySet, target: CriticTarget) -> Result<Self> {
        let average = |values| Self {
            values,
            layout: Layout::Average { n_states: mdp.n_states() },
        };
        match target {
            CriticTarget::WorstCase => Ok(average(robust_values(mdp, policy)?)),
            CriticTarget::Prime { lambda, epsilon, v } if lambda != 0.0 => {
                let (graph, index) = hinge_graph(mdp, HingeChannel::prime(lambda, epsilon, v), DEFAULT_NODE_BUDGET)?;
                Ok(Self {
                    values: graph_values(&graph, policy),
                    layout: Layout::Hinge(index),
                })
            }
            // a zero multiplier makes the hinge vanish; reuse the plain tables
            CriticTarget::SoftRobust | CriticTarget::Prime { .. } => Ok(average(graph_values(&average_graph(mdp)?, policy))),
        }
    }

    /// Node for the decision at time `t` in state `s` after accumulating `loss`.
    pub fn node(&self, t: usize, s: usize, loss: f64) -> Result<usize> {
        match &self.layout {
            Layout::Average { n_states } => Ok(t * n_states + s),
            Layout::Hinge(index) => index
                .get(t, s, loss)
                .ok_or_else(|| Error::Domain(format!("no critic node for (t={t}, s={s}, loss={loss})"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, EnvSpec, Variant};
    use crate::exact::graph::average_node;

    #[test]
    fn zero_lambda_prime_equals_soft_robust_bitwise() {
        let mdp = make_env(&EnvSpec::slippery_chain(Variant::Disc)).unwrap();
        let pol = OptionPolicySet::uniform(mdp.n_states(), 2, 2);
        let a = CriticTables::build(&mdp, &pol, CriticTarget::SoftRobust).unwrap();
        let b = CriticTables::build(&mdp, &pol, CriticTarget::Prime { lambda: 0.0, epsilon: 0.1, v: 3.0 }).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.node(2, 3, 7.0).unwrap(), average_node(&mdp, 2, 3));
    }
}
