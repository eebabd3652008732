use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_options::augmentation::prime_closed_form;
use robust_options::exact::*;
use robust_options::option_policy::OptionPolicySet;
use robust_options::risk::dprime_mean;
use robust_options::robust_mdp::{sample_categorical, RobustMdp};

const BUDGET: usize = DEFAULT_NODE_BUDGET;

fn instances(seed: u64, n: usize) -> Vec<(RobustMdp, OptionPolicySet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_instance(&mut rng, InstanceLimits::default()).unwrap()).collect()
}

fn initial_value(mdp: &RobustMdp, policy: &OptionPolicySet) -> f64 {
    let g = average_graph(mdp).unwrap();
    graph_values(&g, policy).initial_value(&g)
}

/// Flat backward induction on the averaged kernel, for single-option policies.
fn flat_value(mdp: &RobustMdp, pi: impl Fn(usize) -> Vec<f64>, worst: bool) -> Vec<f64> {
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let mut next = vec![0.0; n];
    for _ in 0..mdp.horizon() {
        let mut cur = vec![0.0; n];
        for s in 0..n {
            if mdp.is_terminal(s) {
                continue;
            }
            let probs = pi(s);
            for (a, pa) in probs.iter().enumerate() {
                let per_param: Vec<f64> = (0..mdp.params(s).len())
                    .map(|p| {
                        mdp.outcomes(s, a, p)
                            .unwrap()
                            .iter()
                            .map(|o| o.prob * (o.cost + gamma * next[o.next]))
                            .sum()
                    })
                    .collect();
                let q = if worst {
                    per_param.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    per_param.iter().zip(mdp.params(s).probs()).map(|(q, w)| q * w).sum()
                };
                cur[s] += pa * q;
            }
        }
        next = cur;
    }
    next
}

#[test]
fn mixing_per_parameter_values_matches_the_average_mdp() {
    for (mdp, policy) in instances(11, 30) {
        let mixed = dp_values(&mdp, &policy).unwrap().soft_robust_loss(&mdp);
        let averaged = initial_value(&mdp, &policy);
        let enumerated = enumerate_loss_distribution(&mdp, &policy, BUDGET).unwrap().mean();
        assert!((mixed - averaged).abs() <= 1e-10, "{mixed} vs {averaged}");
        assert!((enumerated - averaged).abs() <= 1e-10, "{enumerated} vs {averaged}");
    }
}

#[test]
fn hinge_expectation_decomposes_over_the_first_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (mdp, policy) in instances(12, 30) {
        let v = rng.gen_range(0.0..5.0);
        let joint = dprime_mean(&enumerate_loss_distribution(&mdp, &policy, BUDGET).unwrap(), v);
        let mut mixed = 0.0;
        for (s, &w) in mdp.initial().iter().enumerate().filter(|(_, w)| **w > 0.0) {
            for (p, &pp) in mdp.params(s).probs().iter().enumerate() {
                let cond = enumerate_given_first_param(&mdp, &policy, s, p, BUDGET).unwrap();
                mixed += w * pp * dprime_mean(&cond, v);
            }
        }
        let (g, _) = hinge_graph(&mdp, HingeChannel::dprime(v), BUDGET).unwrap();
        let by_dp = graph_values(&g, &policy).initial_value(&g);
        assert!((joint - mixed).abs() <= 1e-12);
        assert!((joint - by_dp).abs() <= 1e-12);
    }
}

#[test]
fn single_option_values_match_flat_backward_induction() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (mdp, _) in instances(13, 20) {
        let policy = OptionPolicySet::random(mdp.n_states(), 1, mdp.n_actions(), 2.0, &mut rng);
        let flat = flat_value(&mdp, |s| policy.pi_intra(0, s), false);
        let expected: f64 = mdp.initial().iter().zip(&flat).map(|(w, v)| w * v).sum();
        assert!((initial_value(&mdp, &policy) - expected).abs() <= 1e-10);

        let worst = flat_value(&mdp, |s| policy.pi_intra(0, s), true);
        let robust = robust_values(&mdp, &policy).unwrap();
        for s in 0..mdp.n_states() {
            assert!((robust.v[average_node(&mdp, 0, s)] - worst[s]).abs() <= 1e-10);
            assert!(worst[s] >= flat[s] - 1e-12);
        }
    }
}

#[test]
fn exact_gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (mdp, policy) in instances(14, 8) {
        let (lambda, epsilon, v) = (rng.gen_range(0.1..2.0), rng.gen_range(0.05..0.5), rng.gen_range(0.0..5.0));
        let soft = soft_robust_gradient(&mdp, &policy).unwrap();
        let prime = prime_gradient(&mdp, &policy, lambda, epsilon, v).unwrap();
        let objective = |pol: &OptionPolicySet| {
            let d = enumerate_loss_distribution(&mdp, pol, BUDGET).unwrap();
            (d.mean(), d.expect(|c| prime_closed_form(c, lambda, epsilon, v)))
        };
        for i in 0..policy.theta().len() {
            let mut up = policy.clone();
            let mut down = policy.clone();
            up.set_theta(i, policy.theta()[i] + H);
            down.set_theta(i, policy.theta()[i] - H);
            let (a, b) = (objective(&up), objective(&down));
            for (exact, fd) in [(soft.flat[i], (a.0 - b.0) / (2.0 * H)), (prime.flat[i], (a.1 - b.1) / (2.0 * H))] {
                assert!((exact - fd).abs() <= (1e-4 * fd.abs()).max(1e-8), "entry {i}: {exact} vs {fd}");
            }
        }
        // the per-block accessors are views of the flat vector
        let sh = policy.shape();
        assert_eq!(exact_grad_pi_omega_over(&mdp, &policy).unwrap(), soft.flat[..sh.over_len()].to_vec());
        assert_eq!(
            exact_grad_pi_intra(&mdp, &policy).unwrap(),
            soft.flat[sh.over_len()..sh.over_len() + sh.intra_len()].to_vec()
        );
        assert_eq!(exact_grad_beta(&mdp, &policy).unwrap(), soft.flat[sh.over_len() + sh.intra_len()..].to_vec());
    }
}

/// Monte-Carlo occupancy of `(s, ω)` starting from `(s0, ω0)` on the averaged kernel.
fn sampled_occupancy(mdp: &RobustMdp, policy: &OptionPolicySet, s0: usize, o0: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n_o = policy.n_options();
    let dim = mdp.n_states() * n_o;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (vec![0.0; dim], vec![0.0; dim]);
    for _ in 0..n {
        let mut counts = vec![0.0; dim];
        let (mut s, mut o, mut g) = (s0, o0, 1.0);
        for _ in 0..mdp.horizon() {
            counts[s * n_o + o] += g;
            let a = sample_categorical(&policy.pi_intra(o, s), &mut rng);
            s = sample_categorical(&mdp.average_transition(s, a).unwrap(), &mut rng);
            if mdp.is_terminal(s) {
                break;
            }
            if rng.gen_bool(policy.beta(o, s)) {
                o = sample_categorical(&policy.pi_over(s), &mut rng);
            }
            g *= mdp.discount();
        }
        for i in 0..dim {
            sum[i] += counts[i];
            sum_sq[i] += counts[i] * counts[i];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|x| x / nf).collect();
    let se = (0..dim).map(|i| ((sum_sq[i] / nf - mean[i] * mean[i]).max(0.0) / nf).sqrt()).collect();
    (mean, se)
}

#[test]
fn occupancy_matches_simulation() {
    for (k, (mdp, policy)) in instances(15, 5).into_iter().enumerate() {
        let occ = occupancy(&mdp, &policy, 0, 0).unwrap();
        let (mean, se) = sampled_occupancy(&mdp, &policy, 0, 0, 40_000, k as u64);
        for i in 0..mean.len() {
            assert!(
                (occ.d_state_option[i] - mean[i]).abs() <= 5.0 * se[i] + 1e-9,
                "cell {i}: {} vs {} ± {}",
                occ.d_state_option[i],
                mean[i],
                se[i]
            );
        }
        let total: f64 = occ.d_state.iter().sum();
        assert!((total - occ.d_state_option.iter().sum::<f64>()).abs() <= 1e-12);
    }
}

#[test]
fn zero_discount_occupancy_is_the_start_pair() {
    let (mdp, policy) = instances(16, 1).pop().unwrap();
    let occ = occupancy_with_discount(&mdp, &policy, 0, policy.n_options() - 1, 0.0).unwrap();
    for s in 0..mdp.n_states() {
        for o in 0..policy.n_options() {
            let expected = if s == 0 && o + 1 == policy.n_options() { 1.0 } else { 0.0 };
            assert_eq!(occ.d(s, o), expected);
        }
    }
}

#[test]
fn graph_occupancy_totals_match_the_tabular_kernel() {
    for (mdp, policy) in instances(17, 10) {
        if mdp.initial()[0] != 1.0 {
            continue;
        }
        let g = average_graph(&mdp).unwrap();
        let node_occ = graph_occupancy(&g, &policy, Some(0));
        let tab = occupancy(&mdp, &policy, 0, 0).unwrap();
        for s in 0..mdp.n_states() {
            for o in 0..policy.n_options() {
                let from_graph: f64 = (0..mdp.horizon()).map(|t| node_occ.active[average_node(&mdp, t, s)][o]).sum();
                assert!((from_graph - tab.d(s, o)).abs() <= 1e-12, "({s}, {o})");
            }
        }
    }
}

#[test]
fn enumeration_budget_is_enforced() {
    let (mdp, policy) = instances(18, 1).pop().unwrap();
    assert!(matches!(
        enumerate_loss_distribution(&mdp, &policy, 1),
        Err(robust_options::Error::EnumerationBudget { budget: 1 })
    ));
}
