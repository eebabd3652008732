use robust_options::envs::{make_env, EnvSpec, Variant, RISKY, SAFE};
use robust_options::exact::{enumerate_loss_distribution, DEFAULT_NODE_BUDGET};
use robust_options::option_policy::OptionPolicySet;
use robust_options::risk::cvar_epsilon;
use robust_options::robust_mdp::RobustMdp;
use robust_options::rollout::sample_batch;
use robust_options::trainers::*;

fn two_arm() -> (RobustMdp, OptionPolicySet) {
    (make_env(&EnvSpec::two_arm_risk()).unwrap(), OptionPolicySet::uniform(2, 1, 2))
}

fn chain() -> (RobustMdp, OptionPolicySet) {
    let mdp = make_env(&EnvSpec::slippery_chain(Variant::Disc)).unwrap();
    let pol = OptionPolicySet::uniform(mdp.n_states(), 2, 2);
    (mdp, pol)
}

#[test]
fn frozen_theta_moves_only_v_and_lambda() {
    let (mdp, pol) = two_arm();
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 50, 20, 0.0);
    cfg.zeta = Some(5.0);
    cfg.alpha_v = 0.1;
    cfg.alpha_lambda = 0.1;
    let (out, rep) = oc3_train(&mdp, &pol, &cfg).unwrap();
    assert_eq!(out.theta(), pol.theta());
    assert_eq!(rep.records.len(), 50);
    let last = rep.records.last().unwrap();
    assert!(last.v != rep.initial_v || last.lambda != cfg.lambda_init);
}

#[test]
fn oc3_without_multiplier_is_soft_robust() {
    let (mdp, pol) = chain();
    let mut oc3 = TrainerConfig::new(Algorithm::Oc3, 30, 40, 0.5);
    oc3.zeta = Some(3.0);
    oc3.lambda_init = 0.0;
    oc3.alpha_v = 0.2;
    oc3.seed = 9;
    let soft = TrainerConfig {
        algorithm: Algorithm::SoftRobust,
        zeta: None,
        ..oc3.clone()
    };
    let (a, ra) = oc3_train(&mdp, &pol, &oc3).unwrap();
    let (b, rb) = soft_robust_train(&mdp, &pol, &soft).unwrap();
    assert_eq!(a.theta(), b.theta());
    for (x, y) in ra.records.iter().zip(&rb.records) {
        assert_eq!((x.soft_robust_loss, x.cvar, x.lambda), (y.soft_robust_loss, y.cvar, y.lambda));
    }
}

#[test]
fn training_is_deterministic() {
    let (mdp, pol) = chain();
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 20, 30, 0.5);
    cfg.zeta = Some(5.0);
    cfg.alpha_v = 0.1;
    cfg.alpha_lambda = 0.01;
    cfg.seed = 3;
    let (a, ra) = train(&mdp, &pol, &cfg).unwrap();
    let (b, rb) = train(&mdp, &pol, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.records, rb.records);
    assert_eq!(ra.to_csv(), rb.to_csv());
}

#[test]
fn multiplier_never_decreases_while_violated() {
    let (mdp, pol) = chain();
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 200, 50, 0.5);
    cfg.zeta = Some(4.0);
    cfg.alpha_v = 0.1;
    cfg.alpha_lambda = 0.05;
    let (_, rep) = train(&mdp, &pol, &cfg).unwrap();
    let mut prev = cfg.lambda_init;
    for r in &rep.records {
        assert!(r.lambda >= 0.0);
        if r.constraint_violation.unwrap() > 0.0 {
            assert!(r.lambda >= prev, "iteration {}", r.iteration);
        }
        prev = r.lambda;
    }
}

fn first_action(policy: &OptionPolicySet) -> Vec<f64> {
    first_step_action_probs(policy, 0)
}

#[test]
fn two_arm_baselines_pick_the_expected_arm() {
    let (mdp, pol) = two_arm();
    let soft = TrainerConfig::new(Algorithm::SoftRobust, 2000, 50, 1.0);
    assert!(first_action(&soft_robust_train(&mdp, &pol, &soft).unwrap().0)[RISKY] >= 0.95);
    let worst = TrainerConfig::new(Algorithm::WorstCase, 500, 50, 1.0);
    assert!(first_action(&worst_case_train(&mdp, &pol, &worst).unwrap().0)[SAFE] >= 0.95);
    let eo = TrainerConfig::new(Algorithm::EoOpt, 2000, 50, 1.0);
    assert!(first_action(&eoopt_train(&mdp, &pol, &eo).unwrap().0)[SAFE] >= 0.95);
}

/// Soft robust loss of every deterministic flat policy on the chain, by enumeration.
fn best_deterministic_chain_loss(mdp: &RobustMdp) -> f64 {
    let decisions: Vec<usize> = (0..mdp.n_states()).filter(|&s| !mdp.is_terminal(s)).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << decisions.len()) {
        let mut pol = OptionPolicySet::uniform(mdp.n_states(), 1, 2);
        let sh = pol.shape();
        for (bit, &s) in decisions.iter().enumerate() {
            let a = ((mask >> bit) & 1) as usize;
            pol.set_theta(sh.intra_index(0, s, a), 30.0);
            pol.set_theta(sh.intra_index(0, s, 1 - a), -30.0);
        }
        best = best.min(enumerate_loss_distribution(mdp, &pol, DEFAULT_NODE_BUDGET).unwrap().mean());
    }
    best
}

#[test]
fn soft_robust_reaches_the_chain_optimum() {
    let (mdp, pol) = chain();
    let best = best_deterministic_chain_loss(&mdp);
    assert!((best - 2.7).abs() < 1e-9);
    let cfg = TrainerConfig::new(Algorithm::SoftRobust, 500, 100, 0.5);
    let (out, _) = train(&mdp, &pol, &cfg).unwrap();
    let loss = enumerate_loss_distribution(&mdp, &out, DEFAULT_NODE_BUDGET).unwrap().mean();
    assert!(loss <= best * 1.05, "{loss} vs {best}");
}

#[test]
fn worst_case_critic_collapses_for_a_single_parameter() {
    let (mdp, pol) = chain();
    let single = make_env(&EnvSpec {
        param_dist: Some(robust_options::ParamDistSpec::point(0.4)),
        ..EnvSpec::slippery_chain(Variant::Disc)
    })
    .unwrap();
    let c = CriticTables::build(&single, &pol, CriticTarget::WorstCase).unwrap();
    let d = CriticTables::build(&single, &pol, CriticTarget::SoftRobust).unwrap();
    assert_eq!(c.values, d.values);
    let wide = CriticTables::build(&mdp, &pol, CriticTarget::WorstCase).unwrap();
    let avg = CriticTables::build(&mdp, &pol, CriticTarget::SoftRobust).unwrap();
    assert!(wide.values.v[0] >= avg.values.v[0] - 1e-12);
}

#[test]
fn eoopt_keeps_the_upper_tail() {
    let losses: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(eoopt_kept(&losses, 0.2).unwrap(), vec![8, 9]);
    assert_eq!(eoopt_kept(&losses, 0.999).unwrap(), (0..10).collect::<Vec<_>>());
}

#[test]
fn eoopt_keeping_everything_matches_the_soft_robust_step() {
    let (mdp, pol) = chain();
    let mut eo = TrainerConfig::new(Algorithm::EoOpt, 1, 40, 0.5);
    eo.epsilon = 0.999;
    eo.critic = Critic::MonteCarlo;
    let soft = TrainerConfig {
        algorithm: Algorithm::SoftRobust,
        ..eo.clone()
    };
    let (a, ra) = train(&mdp, &pol, &eo).unwrap();
    let (b, _) = train(&mdp, &pol, &soft).unwrap();
    assert_eq!(ra.records[0].used_episodes, 40);
    for (x, y) in a.theta().iter().zip(b.theta()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn oc3_prefers_the_skate_under_a_tight_budget() {
    let (mdp, pol) = chain();
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 500, 100, 0.5);
    cfg.zeta = Some(5.1);
    cfg.alpha_v = 0.1;
    cfg.alpha_lambda = 0.01;
    let (out, _) = train(&mdp, &pol, &cfg).unwrap();
    let d = enumerate_loss_distribution(&mdp, &out, DEFAULT_NODE_BUDGET).unwrap();
    assert!(cvar_epsilon(&d, 0.1).unwrap() <= 5.1);
    // corridor with the skate: mean 3.425; corridor alone: 5
    assert!(d.mean() < 3.6, "{}", d.mean());
}

#[test]
fn monte_carlo_critic_trains_too() {
    let (mdp, pol) = two_arm();
    let mut cfg = TrainerConfig::new(Algorithm::SoftRobust, 500, 50, 1.0);
    cfg.critic = Critic::MonteCarlo;
    let (out, _) = train(&mdp, &pol, &cfg).unwrap();
    assert!(first_action(&out)[RISKY] >= 0.95);
}

#[test]
fn config_validation_names_fields() {
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 1, 1, 0.1);
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("trainer.zeta"), "{err}");
    cfg.zeta = Some(1.0);
    cfg.epsilon = 1.0;
    assert!(cfg.validate().unwrap_err().to_string().contains("trainer.epsilon"));
    let eo = TrainerConfig::new(Algorithm::EoOpt, 1, 5, 0.1);
    assert!(eo.validate().unwrap_err().to_string().contains("trainer.n_epi"));
    let (mdp, pol) = two_arm();
    let wrong = TrainerConfig::new(Algorithm::SoftRobust, 1, 5, 0.1);
    assert!(oc3_train(&mdp, &pol, &wrong).is_err());
}

#[test]
fn warm_up_sets_v_to_the_empirical_var() {
    let (mdp, pol) = two_arm();
    let mut cfg = TrainerConfig::new(Algorithm::Oc3, 1, 10, 0.1);
    cfg.zeta = Some(5.0);
    cfg.warmup_episodes = 200;
    let (_, rep) = train(&mdp, &pol, &cfg).unwrap();
    let warm = sample_batch(&mdp, &pol, cfg.sampling_mode, 200, cfg.seed, 0).unwrap();
    let var = robust_options::risk::var_epsilon(&robust_options::risk::LossSamples::unweighted(warm.losses()), 0.1).unwrap();
    assert_eq!(rep.initial_v, var);
}
