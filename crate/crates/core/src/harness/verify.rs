//! Self-checks of the identities, oracle equivalences and estimators.
//!
//! Every suite returns a [`SuiteResult`] rather than failing, so that the
//! command can report all of them at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment_costs_with, dprime_closed_form, prime_closed_form, x_update};
use crate::error::Result;
use crate::exact::{
    average_graph, dp_values, enumerate_given_first_param, enumerate_loss_distribution, graph_values, hinge_graph,
    prime_gradient, random_instance, soft_robust_gradient, HingeChannel, InstanceLimits, DEFAULT_NODE_BUDGET,
};
use crate::envs::{make_env, EnvSpec, RISKY, SAFE};
use crate::option_policy::OptionPolicySet;
use crate::risk::{cvar_epsilon, dprime_mean, grad_lambda, grad_v, indicator_mean, lagrangian_value, var_epsilon, LagrangianState, LossSamples};
use crate::robust_mdp::{trajectory_loss, Outcome, ParamSet, RobustMdp, RobustMdpParts};
use crate::rollout::{sample_batch, ParamMode};
use crate::trainers::{exact_critic_gradient, CriticTables, CriticTarget, EstimatorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub tolerance: f64,
    /// Largest observed error, in the suite's own measure.
    pub max_error: f64,
    pub cases: usize,
    pub failures: usize,
    pub detail: String,
}

impl SuiteResult {
    fn from_errors(name: &str, tolerance: f64, errors: &[f64], detail: String) -> Self {
        let failures = errors.iter().filter(|e| !(**e <= tolerance)).count();
        Self {
            name: name.into(),
            passed: failures == 0 && !errors.is_empty(),
            tolerance,
            max_error: errors.iter().copied().fold(0.0, f64::max),
            cases: errors.len(),
            failures,
            detail,
        }
    }

    fn errored(name: &str, tolerance: f64, err: crate::Error) -> Self {
        Self {
            name: name.into(),
            passed: false,
            tolerance,
            max_error: f64::NAN,
            cases: 0,
            failures: 1,
            detail: format!("suite aborted: {err}"),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: max error {:.3e} (tolerance {:.1e}), {} cases, {} failures; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance,
            self.cases,
            self.failures,
            self.detail
        )
    }
}

fn guard(name: &str, tolerance: f64, f: impl FnOnce() -> Result<SuiteResult>) -> SuiteResult {
    f().unwrap_or_else(|e| SuiteResult::errored(name, tolerance, e))
}

pub type SlackUpdate = fn(f64, f64, f64) -> Result<f64>;

/// Augmented channel sums against `𝒞′` and `𝒞″` in closed form on random cost sequences.
pub fn augmentation_identities(n_episodes: usize, seed: u64, update: SlackUpdate) -> SuiteResult {
    const TOL: f64 = 1e-9;
    let name = "augmentation_identities";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut errors = Vec::with_capacity(2 * n_episodes);
        for _ in 0..n_episodes {
            let gamma = [0.9, 0.99, 1.0][rng.gen_range(0..3)];
            let len = rng.gen_range(1..=30);
            let costs: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..=5.0)).collect();
            let lambda = rng.gen_range(0.0..5.0);
            let epsilon = rng.gen_range(0.01..0.99);
            let v = rng.gen_range(-20.0..20.0);
            let states = vec![0; len];
            let aug = augment_costs_with(&states, 0, &costs, lambda, epsilon, v, gamma, update)?;
            let loss = trajectory_loss(&costs, gamma);
            errors.push((aug.loss_prime(gamma) - prime_closed_form(loss, lambda, epsilon, v)).abs());
            errors.push((aug.loss_dprime(gamma) - dprime_closed_form(loss, v)).abs());
        }
        Ok(SuiteResult::from_errors(name, TOL, &errors, "|channel sum - closed form|".into()))
    })
}

/// Mixing per-parameter values with `ℙ(p)` against the value of the average MDP.
pub fn average_mdp_equivalence(n_instances: usize, seed: u64) -> SuiteResult {
    const TOL: f64 = 1e-10;
    let name = "average_mdp_equivalence";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut errors = Vec::with_capacity(n_instances);
        for _ in 0..n_instances {
            let (mdp, policy) = random_instance(&mut rng, InstanceLimits::default())?;
            let mixed = dp_values(&mdp, &policy)?.soft_robust_loss(&mdp);
            let graph = average_graph(&mdp)?;
            let averaged = graph_values(&graph, &policy).initial_value(&graph);
            errors.push((mixed - averaged).abs());
        }
        Ok(SuiteResult::from_errors(name, TOL, &errors, "|sum_p P(p) V(s0, p) - V_avg(s0)|".into()))
    })
}

/// `𝔼[max(0, 𝒞 − v)]` three ways: over the joint distribution, mixed over the
/// first-step parameter, and by the hinge-augmented backward induction.
pub fn hinge_decomposability(n_instances: usize, seed: u64) -> SuiteResult {
    const TOL: f64 = 1e-12;
    let name = "hinge_decomposability";
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut errors = Vec::with_capacity(2 * n_instances);
        for _ in 0..n_instances {
            let (mdp, policy) = random_instance(&mut rng, InstanceLimits::default())?;
            let v = rng.gen_range(0.0..6.0);
            let joint = dprime_mean(&enumerate_loss_distribution(&mdp, &policy, DEFAULT_NODE_BUDGET)?, v);
            let mut mixed = 0.0;
            for (s, &w) in mdp.initial().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let ps = mdp.params(s).clone();
                for (p, &pp) in ps.probs().iter().enumerate() {
                    let cond = enumerate_given_first_param(&mdp, &policy, s, p, DEFAULT_NODE_BUDGET)?;
                    mixed += w * pp * dprime_mean(&cond, v);
                }
            }
            let (graph, _) = hinge_graph(&mdp, HingeChannel::dprime(v), DEFAULT_NODE_BUDGET)?;
            let by_dp = graph_values(&graph, &policy).initial_value(&graph);
            errors.push((joint - mixed).abs());
            errors.push((joint - by_dp).abs());
        }
        Ok(SuiteResult::from_errors(name, TOL, &errors, "|joint - mixed|, |joint - hinge DP|".into()))
    })
}

/// `|exact − fd| / max(|fd|, 1e-8 / rel_tol)`: at most `rel_tol` exactly when
/// the relative error is within `rel_tol` or the absolute error within 1e-8.
fn fd_error(exact: f64, fd: f64, rel_tol: f64) -> f64 {
    (exact - fd).abs() / fd.abs().max(1e-8 / rel_tol)
}

/// Exact gradients against central differences of the enumerated objective.
///
/// With `composite` the objective is `𝔼[𝒞 + λ max(0, 𝒞 − v)/ε]` for random
/// `(λ, ε, v)`, otherwise the soft robust loss. Errors are relative with an
/// absolute floor of 1e-8.
pub fn gradient_finite_difference(n_instances: usize, seed: u64, composite: bool) -> SuiteResult {
    const TOL: f64 = 1e-4;
    const H: f64 = 1e-5;
    let name = if composite { "gradient_fd_composite" } else { "gradient_fd_soft_robust" };
    guard(name, TOL, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut errors = Vec::new();
        for _ in 0..n_instances {
            let (mdp, policy) = random_instance(&mut rng, InstanceLimits::default())?;
            let lambda = rng.gen_range(0.1..3.0);
            let epsilon = rng.gen_range(0.05..0.5);
            let v = rng.gen_range(0.0..6.0);
            let objective = |pol: &OptionPolicySet| -> Result<f64> {
                let d = enumerate_loss_distribution(&mdp, pol, DEFAULT_NODE_BUDGET)?;
                Ok(if composite {
                    d.expect(|c| prime_closed_form(c, lambda, epsilon, v))
                } else {
                    d.mean()
                })
            };
            let exact = if composite {
                prime_gradient(&mdp, &policy, lambda, epsilon, v)?
            } else {
                soft_robust_gradient(&mdp, &policy)?
            };
            for (i, &g) in exact.flat.iter().enumerate() {
                let mut up = policy.clone();
                let mut down = policy.clone();
                up.set_theta(i, policy.theta()[i] + H);
                down.set_theta(i, policy.theta()[i] - H);
                let fd = (objective(&up)? - objective(&down)?) / (2.0 * H);
                errors.push(fd_error(g, fd, TOL));
            }
        }
        Ok(SuiteResult::from_errors(name, TOL, &errors, "relative error per theta entry".into()))
    })
}

fn two_arm_policy(q_risky: f64) -> OptionPolicySet {
    let mut p = OptionPolicySet::uniform(2, 1, 2);
    let sh = p.shape();
    let logit = (q_risky / (1.0 - q_risky)).ln();
    p.set_theta(sh.intra_index(0, 0, SAFE), 0.0);
    p.set_theta(sh.intra_index(0, 0, RISKY), logit);
    p
}

/// `∂L/∂λ` against the λ-difference of `L`, and `∂L/∂v` against central
/// differences in `v`, on enumerated TwoArmRisk distributions.
///
/// `L` is affine in `λ`, so with `𝔼[𝒞] = 0` and `λ ∈ {0, 1}` the difference
/// is computed without rounding and must match bit for bit; with the actual
/// `𝔼[𝒞]` it must match to 1e-12. The `v` checks skip points within `h` of an atom.
pub fn lagrangian_consistency() -> SuiteResult {
    const TOL: f64 = 1e-3;
    const H: f64 = 1e-4;
    let name = "lagrangian_gradients";
    guard(name, TOL, || {
        let mdp = make_env(&EnvSpec::two_arm_risk())?;
        let mut v_errors = Vec::new();
        let mut lambda_failures = 0usize;
        let mut lambda_cases = 0usize;
        for q in [0.01, 0.3, 0.5, 0.9, 0.99] {
            let dist = enumerate_loss_distribution(&mdp, &two_arm_policy(q), DEFAULT_NODE_BUDGET)?;
            let atoms: Vec<f64> = dist.atoms().iter().map(|a| a.0).collect();
            let soft = dist.mean();
            for v in [-3.7, -1.3, -0.5, 0.5, 2.25, 7.0, 9.5, 11.0] {
                for lambda in [0.0, 0.5, 2.0] {
                    for zeta in [0.0, 5.0, 12.0] {
                        let st = LagrangianState::new(v, lambda, zeta, 0.1, 0.0, 0.0)?;
                        let dm = dprime_mean(&dist, v);
                        let g = grad_lambda(&st, dm);
                        let at = |sr: f64, l: f64| lagrangian_value(sr, dm, &LagrangianState { lambda: l, ..st });
                        lambda_cases += 2;
                        if at(0.0, 1.0) - at(0.0, 0.0) != g {
                            lambda_failures += 1;
                        }
                        if ((at(soft, lambda + 1.0) - at(soft, lambda)) - g).abs() > 1e-12 * g.abs().max(1.0) {
                            lambda_failures += 1;
                        }
                        if atoms.iter().any(|a| (a - v).abs() <= H) {
                            continue;
                        }
                        let lv = |x: f64| lagrangian_value(soft, dprime_mean(&dist, x), &LagrangianState { v: x, ..st });
                        let fd = (lv(v + H) - lv(v - H)) / (2.0 * H);
                        v_errors.push(fd_error(grad_v(&st, indicator_mean(&dist, v)), fd, TOL));
                    }
                }
            }
        }
        let mut res = SuiteResult::from_errors(
            name,
            TOL,
            &v_errors,
            format!("v: relative error vs central difference; lambda slope: {lambda_failures}/{lambda_cases} mismatches"),
        );
        res.cases += lambda_cases;
        res.failures += lambda_failures;
        res.passed &= lambda_failures == 0;
        Ok(res)
    })
}

/// Statistics of the empirical VaR/CVaR at ε = 0.1 on i.i.d. draws from `{−2: 0.9, 10: 0.1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConvergence {
    pub n_samples: usize,
    pub repetitions: usize,
    pub first_cvar: f64,
    pub cvar_within_tol: usize,
    pub var_equals_ten: usize,
}

pub fn risk_convergence_stats(n_samples: usize, repetitions: usize, seed: u64) -> Result<RiskConvergence> {
    let mut out = RiskConvergence {
        n_samples,
        repetitions,
        first_cvar: f64::NAN,
        cvar_within_tol: 0,
        var_equals_ten: 0,
    };
    for r in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let xs: Vec<f64> = (0..n_samples).map(|_| if rng.gen_bool(0.1) { 10.0 } else { -2.0 }).collect();
        let s = LossSamples::unweighted(xs);
        let cvar = cvar_epsilon(&s, 0.1)?;
        if r == 0 {
            out.first_cvar = cvar;
        }
        if (cvar - 10.0).abs() <= 0.05 {
            out.cvar_within_tol += 1;
        }
        if var_epsilon(&s, 0.1)? == 10.0 {
            out.var_equals_ten += 1;
        }
    }
    Ok(out)
}

/// Requires every repetition's CVaR within 0.05 of 10 and VaR = 10 in at least 99% of repetitions.
pub fn risk_estimator_convergence(seed: u64) -> SuiteResult {
    let name = "risk_estimator_convergence";
    guard(name, 0.05, || {
        let st = risk_convergence_stats(10_000, 100, seed)?;
        let passed = (st.first_cvar - 10.0).abs() <= 0.05 && st.var_equals_ten * 100 >= 99 * st.repetitions;
        Ok(SuiteResult {
            name: name.into(),
            passed,
            tolerance: 0.05,
            max_error: (st.first_cvar - 10.0).abs(),
            cases: st.repetitions,
            failures: st.repetitions - st.var_equals_ten,
            detail: format!(
                "CVaR {:.4}; CVaR within 0.05 in {}/{}; VaR = 10 in {}/{}",
                st.first_cvar, st.cvar_within_tol, st.repetitions, st.var_equals_ten, st.repetitions
            ),
        })
    })
}

/// The fixed four-state robust MDP of the unbiasedness suite: two corridor
/// states with two actions, an uncertain slip parameter, and a terminal state.
pub fn unbiasedness_instance() -> Result<(RobustMdp, OptionPolicySet)> {
    let params = ParamSet::new(vec![0.1, 0.5], vec![0.7, 0.3])?;
    let row = |s: usize, a: usize, p: f64| -> Vec<Outcome> {
        match (s, a) {
            (0, 0) => vec![Outcome::new(1, 1.0, 1.0 - p), Outcome::new(2, 2.0, p)],
            (0, _) => vec![Outcome::new(2, 0.0, 1.0)],
            (1, 0) => vec![Outcome::new(3, 0.0, 1.0 - p), Outcome::new(0, 1.0, p)],
            (1, _) => vec![Outcome::new(2, 1.0, 0.5), Outcome::new(3, 2.0, 0.5)],
            (2, 0) => vec![Outcome::new(3, 1.0, 1.0 - p), Outcome::new(1, 0.0, p)],
            _ => vec![Outcome::new(0, 2.0, 1.0)],
        }
    };
    let mut kernel = Vec::new();
    let mut all_params = Vec::new();
    for s in 0..3 {
        kernel.push((0..2).map(|a| params.values().iter().map(|&p| row(s, a, p)).collect()).collect());
        all_params.push(params.clone());
    }
    kernel.push(vec![]);
    all_params.push(ParamSet::point(0.0));
    let mdp = RobustMdp::new(RobustMdpParts {
        n_states: 4,
        n_actions: 2,
        params: all_params,
        kernel,
        initial: vec![0.8, 0.2, 0.0, 0.0],
        terminal: vec![false, false, false, true],
        discount: 0.9,
        horizon: 6,
        cost_bound: 2.0,
        state_names: None,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let policy = OptionPolicySet::random(4, 2, 2, 1.0, &mut rng);
    Ok((mdp, policy))
}

/// Per-entry z-scores of the sampled critic gradient against the exact gradient.
pub fn unbiasedness_zscores(n_episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let (mdp, policy) = unbiasedness_instance()?;
    let exact = soft_robust_gradient(&mdp, &policy)?.flat;
    let critic = CriticTables::build(&mdp, &policy, CriticTarget::SoftRobust)?;
    let batch = sample_batch(&mdp, &policy, ParamMode::AveragedKernel, n_episodes, seed, 0)?;
    let gamma = mdp.discount();
    let d = exact.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for ep in &batch.episodes {
        let g = exact_critic_gradient(&[ep], &policy, &critic, gamma, EstimatorOptions::default())?;
        for i in 0..d {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    let n = n_episodes as f64;
    Ok((0..d)
        .map(|i| {
            let mean = sum[i] / n;
            let var = (sum_sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let diff = (mean - exact[i]).abs();
            if se == 0.0 {
                if diff <= 1e-12 { 0.0 } else { f64::INFINITY }
            } else {
                diff / se
            }
        })
        .collect())
}

/// Passes when at least 95% of entries lie within 3 standard errors.
pub fn estimator_unbiasedness(n_episodes: usize, seed: u64) -> SuiteResult {
    let name = "estimator_unbiasedness";
    guard(name, 3.0, || {
        let z = unbiasedness_zscores(n_episodes, seed)?;
        let within = z.iter().filter(|&&x| x <= 3.0).count();
        Ok(SuiteResult {
            name: name.into(),
            passed: within * 100 >= 95 * z.len(),
            tolerance: 3.0,
            max_error: z.iter().copied().fold(0.0, f64::max),
            cases: z.len(),
            failures: z.len() - within,
            detail: format!("{within}/{} entries within 3 standard errors over {n_episodes} episodes", z.len()),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub level: Level,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// Runs every suite of `level`. The slack update is a parameter so a corrupted
/// version can be shown to be caught.
pub fn run_with(level: Level, update: SlackUpdate) -> VerifyReport {
    let full = level == Level::Full;
    let seed = 20_240_601;
    let suites = vec![
        augmentation_identities(1000, seed, update),
        average_mdp_equivalence(if full { 100 } else { 20 }, seed),
        hinge_decomposability(if full { 100 } else { 20 }, seed),
        gradient_finite_difference(if full { 50 } else { 5 }, seed, false),
        gradient_finite_difference(if full { 50 } else { 5 }, seed + 1, true),
        lagrangian_consistency(),
        risk_estimator_convergence(seed),
    ];
    let mut suites = suites;
    if full {
        suites.push(estimator_unbiasedness(100_000, seed));
    }
    VerifyReport {
        schema_version: super::config::SCHEMA_VERSION,
        level,
        passed: suites.iter().all(|s| s.passed),
        suites,
    }
}

pub fn run(level: Level) -> VerifyReport {
    run_with(level, x_update)
}
