use std::path::{Path, PathBuf};
use std::process::Command;

use robust_options::envs::{make_env, EnvSpec, Variant, RISKY, SAFE};
use robust_options::harness::verify::{run_with, Level};
use robust_options::harness::*;
use robust_options::option_policy::OptionPolicySet;
use robust_options::trainers::{Algorithm, TrainerConfig};
use robust_options::Error;

fn two_arm_json(trainer: &str) -> String {
    format!(r#"{{"schema_version": 1, "env": {{"name": "two_arm_risk"}}, "trainer": {trainer}}}"#)
}

/// Single-option TwoArmRisk policy that picks `arm` with probability ≈ 1.
fn two_arm_policy(arm: usize) -> OptionPolicySet {
    let mut pol = OptionPolicySet::uniform(2, 1, 2);
    let sh = pol.shape();
    pol.set_theta(sh.intra_index(0, 0, arm), 30.0);
    pol.set_theta(sh.intra_index(0, 0, 1 - arm), -30.0);
    pol
}

fn two_arm_config(dir: &Path) -> RunConfig {
    let mut trainer = TrainerConfig::new(Algorithm::Oc3, 15, 20, 0.5);
    trainer.zeta = Some(5.0);
    trainer.alpha_v = 0.1;
    trainer.alpha_lambda = 0.01;
    let mut cfg = RunConfig::new(EnvSpec::two_arm_risk(), trainer);
    cfg.output_dir = dir.to_path_buf();
    cfg.seeds = SeedSpec::List(vec![4, 1, 3]);
    cfg
}

fn schema_path(err: Error) -> String {
    match err {
        Error::Schema { path, .. } => path,
        other => panic!("expected a schema error, got {other}"),
    }
}

#[test]
fn config_errors_name_the_field() {
    let missing = RunConfig::from_json(&two_arm_json(r#"{"algorithm": "oc3", "n_iter": 1, "n_epi": 10, "alpha_theta": 0.1}"#));
    assert_eq!(schema_path(missing.unwrap_err()), "trainer.zeta");
    let mistyped =
        RunConfig::from_json(&two_arm_json(r#"{"algorithm": "oc3", "n_iter": 1, "n_epi": 10, "alpha_theta": 0.1, "zeta": "five"}"#));
    assert_eq!(schema_path(mistyped.unwrap_err()), "trainer.zeta");
    let unknown = RunConfig::from_json(&two_arm_json(r#"{"algorithm": "soft_robust", "n_iter": 1, "n_epi": 10, "alpha_theta": 0.1, "alpah_v": 1}"#));
    assert!(unknown.unwrap_err().to_string().contains("alpah_v"));
    let ok = RunConfig::from_json(&two_arm_json(r#"{"algorithm": "soft_robust", "n_iter": 1, "n_epi": 10, "alpha_theta": 0.1}"#)).unwrap();
    assert_eq!(ok.seeds.seeds().len(), 20);
    assert_eq!(RunConfig::from_json(&ok.to_json().unwrap()).unwrap(), ok);

    let mut bad_sweep = ok.clone();
    bad_sweep.eval.sweep_values = Some(vec![0.25]);
    assert_eq!(schema_path(bad_sweep.validate().unwrap_err()), "eval.sweep_values");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn train_writes_reproducible_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let summary = cmd_train(&two_arm_config(&a), None).unwrap();
    cmd_train(&two_arm_config(&b), None).unwrap();

    assert_eq!(summary.eval.n_seeds, 3);
    assert_eq!(summary.eval.per_seed.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 3, 4]);
    for seed in [1, 3, 4] {
        let (da, db) = (seed_dir(&a, seed), seed_dir(&b, seed));
        let csv = std::fs::read(da.join("report.csv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 1 + 15);
        assert_eq!(csv, std::fs::read(db.join("report.csv")).unwrap());
        assert_eq!(std::fs::read(da.join("checkpoint.json")).unwrap(), std::fs::read(db.join("checkpoint.json")).unwrap());
        assert_eq!(std::fs::read(da.join("eval.json")).unwrap(), std::fs::read(db.join("eval.json")).unwrap());
    }
    assert_eq!(std::fs::read(a.join("per_seed.csv")).unwrap(), std::fs::read(b.join("per_seed.csv")).unwrap());

    // the satisfied count can be recomputed from the per-seed table
    let table = std::fs::read_to_string(a.join("per_seed.csv")).unwrap();
    let recount = table
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap() <= 5.0)
        .count();
    assert_eq!(Some(recount), summary.eval.satisfied_count);

    let loaded = load_aggregate(&a.join("summary.json")).unwrap();
    assert_eq!(loaded, summary.eval);

    let single = cmd_train(&two_arm_config(&tmp.path().join("c")), Some(3)).unwrap();
    assert_eq!(single.eval.per_seed, vec![summary.eval.per_seed[1].clone()]);
}

#[test]
fn eval_of_fixed_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_arm_config(tmp.path());
    let (safe, risky) = (tmp.path().join("safe.json"), tmp.path().join("risky.json"));
    two_arm_policy(SAFE).save(&safe).unwrap();
    two_arm_policy(RISKY).save(&risky).unwrap();

    let s = &cmd_eval(&cfg, &safe, 0).unwrap().per_seed[0];
    assert_eq!(s.source, EvalSource::Enumeration);
    for x in [s.soft_robust_loss, s.cvar, s.worst_case_loss] {
        assert!(x.abs() < 1e-12, "{s:?}");
    }
    assert_eq!(s.constraint_satisfied, Some(true));

    let r = &cmd_eval(&cfg, &risky, 0).unwrap().per_seed[0];
    assert!((r.soft_robust_loss + 0.8).abs() < 1e-12);
    assert!((r.soft_robust_score - 0.8).abs() < 1e-12);
    assert!((r.var - 10.0).abs() < 1e-12 && (r.cvar - 10.0).abs() < 1e-12);
    assert!((r.worst_case_loss - 10.0).abs() < 1e-12);
    assert_eq!(r.constraint_satisfied, Some(false));
}

#[test]
fn sweep_rows_of_the_risky_arm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = two_arm_config(tmp.path());
    let risky = tmp.path().join("risky.json");
    two_arm_policy(RISKY).save(&risky).unwrap();
    let rows = cmd_sweep(&cfg, &risky, 0).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].score - 2.0).abs() < 1e-12, "{rows:?}");
    assert!((rows[1].score + 10.0).abs() < 1e-12, "{rows:?}");
    assert!(rows.iter().all(|r| r.ci == 0.0));
    let csv = sweep_csv(&rows);
    assert!(csv.starts_with("param,mean_score,ci\n"));
    assert_eq!(csv.lines().count(), 3);

    let mut wrong = cfg.clone();
    wrong.env = EnvSpec::slippery_chain(Variant::Disc);
    assert!(matches!(cmd_sweep(&wrong, &risky, 0), Err(Error::Shape(_))));
}

#[test]
fn sweep_over_slip_is_monotone_with_intervals() {
    let mdp = make_env(&EnvSpec::slippery_chain(Variant::Cont)).unwrap();
    let policy = OptionPolicySet::uniform(mdp.n_states(), 2, 2);
    let mut cfg = EvalConfig {
        method: EvalMethod::MonteCarlo,
        n_eval_episodes: 20_000,
        ..EvalConfig::default()
    };
    let mc = sweep(&mdp, &policy, &cfg, 5).unwrap();
    cfg.method = EvalMethod::Enumeration;
    let exact = sweep(&mdp, &policy, &cfg, 5).unwrap();
    assert_eq!(mc.len(), mdp.uncertain_values().len());
    for w in exact.windows(2) {
        assert!(w[0].param < w[1].param && w[1].loss >= w[0].loss - 1e-12);
    }
    for (m, e) in mc.iter().zip(&exact) {
        assert!(m.ci > 0.0);
        assert!((m.loss - e.loss).abs() <= 1.5 * m.ci, "{m:?} vs {e:?}");
    }
}

#[test]
fn monte_carlo_eval_agrees_with_enumeration() {
    let mdp = make_env(&EnvSpec::slippery_chain(Variant::Disc)).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(21);
    let policy = OptionPolicySet::random(mdp.n_states(), 2, 2, 1.0, &mut rng);
    let exact = evaluate(&mdp, &policy, &EvalConfig::default(), None, 0).unwrap();
    let cfg = EvalConfig {
        method: EvalMethod::MonteCarlo,
        ..EvalConfig::default()
    };
    let mc = evaluate(&mdp, &policy, &cfg, None, 0).unwrap();
    assert_eq!(exact.source, EvalSource::Enumeration);
    assert_eq!((mc.source, mc.n_episodes), (EvalSource::MonteCarlo, Some(100_000)));
    let se = mc.soft_robust_ci / 1.96;
    assert!((mc.soft_robust_loss - exact.soft_robust_loss).abs() <= 3.0 * se);
    assert_eq!(mc, evaluate(&mdp, &policy, &cfg, None, 0).unwrap());
}

#[test]
fn aggregates_ignore_seed_order() {
    let mdp = make_env(&EnvSpec::slippery_chain(Variant::Disc)).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
    let reports: Vec<EvalReport> = (0..6)
        .map(|seed| {
            let pol = OptionPolicySet::random(mdp.n_states(), 2, 2, 1.5, &mut rng);
            evaluate(&mdp, &pol, &EvalConfig::default(), Some(6.0), seed).unwrap()
        })
        .collect();
    let forward = AggregateReport::new(None, "chain".into(), 0.1, Some(6.0), reports.clone()).unwrap();
    let mut reversed = reports.clone();
    reversed.reverse();
    reversed.swap(1, 4);
    let backward = AggregateReport::new(None, "chain".into(), 0.1, Some(6.0), reversed).unwrap();
    assert_eq!(forward, backward);
    assert_eq!(forward.per_seed_csv(), backward.per_seed_csv());
    assert_eq!(forward.satisfied_count, Some(reports.iter().filter(|r| r.cvar <= 6.0).count()));
    assert!(AggregateReport::new(None, "chain".into(), 0.1, None, vec![]).is_err());
}

#[test]
fn zeta_is_the_smallest_baseline_cvar() {
    let tmp = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (k, arm) in [RISKY, SAFE].into_iter().enumerate() {
        let path = tmp.path().join(format!("pol{k}.json"));
        two_arm_policy(arm).save(&path).unwrap();
        let agg = cmd_eval(&two_arm_config(tmp.path()), &path, 0).unwrap();
        let out = tmp.path().join(format!("agg{k}.json"));
        write_json(&out, &agg).unwrap();
        paths.push(out);
    }
    let zeta = cmd_select_zeta(&paths).unwrap();
    assert!(zeta.abs() < 1e-12);
    assert!((cmd_select_zeta(&paths[..1]).unwrap() - 10.0).abs() < 1e-12);
    assert!(cmd_select_zeta(&[tmp.path().join("missing.json")]).is_err());
}

#[test]
fn corrupted_slack_update_is_caught() {
    fn shifted(x: f64, c: f64, gamma: f64) -> robust_options::Result<f64> {
        Ok((x - c) / gamma + 1e-6)
    }
    let report = run_with(Level::Fast, shifted);
    let aug = report.suites.iter().find(|s| s.name == "augmentation_identities").unwrap();
    assert!(!aug.passed);
    assert!(!report.passed);
    let clean = cmd_verify(Level::Fast);
    assert!(clean.suites.iter().find(|s| s.name == "augmentation_identities").unwrap().passed);
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_robust-options")).args(args).output().unwrap()
}

#[test]
fn command_line_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("cfg.json");
    let mut cfg = two_arm_config(&tmp.path().join("out"));
    cfg.seeds = SeedSpec::Range { master: 0, count: 2 };
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();

    let out = cli(&["train", "--config", cfg_arg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: AggregateReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(agg.n_seeds, 2);

    let ckpt: PathBuf = seed_dir(&tmp.path().join("out"), 1).join("checkpoint.json");
    let out = cli(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", cfg_arg]);
    assert!(out.status.success());
    let out = cli(&["sweep", "--checkpoint", ckpt.to_str().unwrap(), "--config", cfg_arg]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("param,mean_score,ci"));

    let summary = tmp.path().join("out/summary.json");
    let out = cli(&["select-zeta", "--reports", summary.to_str().unwrap()]);
    assert!(out.status.success());
    let zeta: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert_eq!(zeta, agg.cvar.mean);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, two_arm_json(r#"{"algorithm": "oc3", "n_iter": 1, "n_epi": 10, "alpha_theta": 0.1}"#)).unwrap();
    let out = cli(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trainer.zeta"));

    // the fast level includes the risk-estimator suite, which fails on its knife-edge
    let out = cli(&["verify", "--level", "fast"]);
    let report: VerifyReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(if report.passed { 0 } else { 1 }));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), report.suites.len());
}

#[test]
fn per_trajectory_sampling_discrepancy() {
    use robust_options::envs::{ChainLayout, LEFT, RIGHT};
    use robust_options::rollout::ParamMode;
    let mdp = make_env(&EnvSpec::slippery_chain(Variant::Disc)).unwrap();
    let lay = ChainLayout { n: 6 };
    let mut ledge = OptionPolicySet::uniform(mdp.n_states(), 1, 2);
    let sh = ledge.shape();
    for s in 0..mdp.n_states() {
        let a = if s == lay.cell(0) { LEFT } else { RIGHT };
        ledge.set_theta(sh.intra_index(0, s, a), 30.0);
        ledge.set_theta(sh.intra_index(0, s, 1 - a), -30.0);
    }
    let wander = OptionPolicySet::uniform(mdp.n_states(), 2, 2);
    let mc = |pol: &OptionPolicySet, mode| {
        let cfg = EvalConfig {
            method: EvalMethod::MonteCarlo,
            sampling_mode: mode,
            ..EvalConfig::default()
        };
        let r = evaluate(&mdp, pol, &cfg, None, 11).unwrap();
        (r.soft_robust_loss, r.soft_robust_ci / 1.96)
    };
    // one visit to the icy ledge: both modes sample the same distribution
    let (per, se_p) = mc(&ledge, ParamMode::PerTrajectoryParam);
    let (avg, se_a) = mc(&ledge, ParamMode::AveragedKernel);
    assert!((per - 2.7).abs() <= 3.0 * se_p && (avg - 2.7).abs() <= 3.0 * se_a, "{per} {avg}");

    // a wandering policy revisits icy cells; the averaged kernel still matches enumeration
    let exact = evaluate(&mdp, &wander, &EvalConfig::default(), None, 0).unwrap().soft_robust_loss;
    let (per, se_p) = mc(&wander, ParamMode::PerTrajectoryParam);
    let (avg, se_a) = mc(&wander, ParamMode::AveragedKernel);
    assert!((avg - exact).abs() <= 3.0 * se_a);
    let z = (per - exact) / se_p;
    eprintln!("per-trajectory sampling on a wandering policy: {per:.4} vs exact {exact:.4} (z = {z:.2})");
    assert!(z.is_finite());
}
