//! Brute-force enumeration of the episode-loss distribution.
//!
//! Probability mass is pushed forward one step at a time, keyed by
//! `(state, previously active option, running loss)`. Parameters are drawn
//! independently at every visit, so the result is the loss distribution of
//! the average MDP. This code path shares nothing with the backward-induction
//! routines and serves as their oracle.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::option_policy::OptionPolicySet;
use crate::risk::LossSamples;
use crate::robust_mdp::{discount_powers, RobustMdp};

type Key = (usize, Option<usize>, u64);

fn push(map: &mut BTreeMap<Key, f64>, key: Key, mass: f64) {
    *map.entry(key).or_insert(0.0) += mass;
}

fn enumerate_from(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    start: &[(usize, f64)],
    first_param: Option<usize>,
    budget: usize,
) -> Result<LossSamples> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let powers = discount_powers(mdp.discount(), mdp.horizon() + 1);
    let mut layer: BTreeMap<Key, f64> = BTreeMap::new();
    for &(s, w) in start {
        push(&mut layer, (s, None, 0f64.to_bits()), w);
    }
    let mut finals: BTreeMap<u64, f64> = BTreeMap::new();
    let mut visited = 0usize;
    for t in 0..mdp.horizon() {
        let mut next: BTreeMap<Key, f64> = BTreeMap::new();
        for (&(s, prev, bits), &mass) in &layer {
            visited += 1;
            if visited > budget {
                return Err(Error::EnumerationBudget { budget });
            }
            let loss = f64::from_bits(bits);
            let pi_over = policy.pi_over(s);
            let mut opts: Vec<f64> = match prev {
                None => pi_over.clone(),
                Some(o) => {
                    let b = policy.beta(o, s);
                    let mut d: Vec<f64> = pi_over.iter().map(|p| b * p).collect();
                    d[o] += 1.0 - b;
                    d
                }
            };
            if opts.iter().all(|&p| p == 0.0) {
                opts = pi_over;
            }
            let params: Vec<(usize, f64)> = match (t, first_param) {
                (0, Some(p)) => vec![(p, 1.0)],
                _ => mdp.params(s).probs().iter().copied().enumerate().collect(),
            };
            for (o, &po) in opts.iter().enumerate() {
                if po == 0.0 {
                    continue;
                }
                let pi = policy.pi_intra(o, s);
                for (a, &pa) in pi.iter().enumerate() {
                    for &(p, pp) in &params {
                        for oc in mdp.outcomes(s, a, p)? {
                            let m = mass * po * pa * pp * oc.prob;
                            if m == 0.0 {
                                continue;
                            }
                            let l = loss + powers[t] * oc.cost;
                            if t + 1 >= mdp.horizon() || mdp.is_terminal(oc.next) {
                                *finals.entry(l.to_bits()).or_insert(0.0) += m;
                            } else {
                                push(&mut next, (oc.next, Some(o), l.to_bits()), m);
                            }
                        }
                    }
                }
            }
        }
        layer = next;
    }
    let mut atoms: Vec<(f64, f64)> = finals.into_iter().map(|(b, w)| (f64::from_bits(b), w)).collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("enumerated mass sums to {total}")));
    }
    Ok(LossSamples {
        values: atoms.iter().map(|a| a.0).collect(),
        weights: Some(atoms.iter().map(|a| a.1).collect()),
    })
}

/// Exact distribution of `𝒞 = Σ γ^t c_t` with parameters marginalized per visit.
pub fn enumerate_loss_distribution(mdp: &RobustMdp, policy: &OptionPolicySet, budget: usize) -> Result<LossSamples> {
    let start: Vec<(usize, f64)> = mdp
        .initial()
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, p)| p > 0.0)
        .collect();
    enumerate_from(mdp, policy, &start, None, budget)
}

/// Loss distribution from start state `s0` given that the first transition uses
/// parameter index `p` of `s0`; later visits draw their parameters as usual.
pub fn enumerate_given_first_param(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    s0: usize,
    p: usize,
    budget: usize,
) -> Result<LossSamples> {
    let len = mdp.params(s0).len();
    if p >= len {
        return Err(Error::ParameterDomain { state: s0, index: p, len });
    }
    if mdp.is_terminal(s0) {
        return Err(Error::Domain(format!("start state {s0} is terminal")));
    }
    enumerate_from(mdp, policy, &[(s0, 1.0)], Some(p), budget)
}
