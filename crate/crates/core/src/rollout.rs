//! Episode sampling for option policies on robust MDPs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::option_policy::{OptionExecutionState, OptionPolicySet};
use crate::robust_mdp::{Episode, RobustMdp, StepRecord, TrajectoryBatch};

/// How model parameters are drawn while collecting data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    /// Draw `p_s` once per episode for every state; revisits reuse it.
    #[default]
    PerTrajectoryParam,
    /// Draw a fresh `p_s` on every visit, i.e. sample the average MDP exactly.
    AveragedKernel,
}

/// Per-episode rng: one ChaCha stream per episode index, independent of thread scheduling.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn rollout(mdp: &RobustMdp, policy: &OptionPolicySet, mode: ParamMode, rng: &mut ChaCha8Rng) -> Result<Episode> {
    policy.check_compatible(mdp.n_states(), mdp.n_actions())?;
    let mut fixed: Vec<Option<usize>> = vec![None; mdp.n_states()];
    let mut s = mdp.sample_initial(rng);
    let mut exec = OptionExecutionState::default();
    let mut steps = Vec::with_capacity(mdp.horizon());
    for _ in 0..mdp.horizon() {
        if mdp.is_terminal(s) {
            break;
        }
        let prev_option = exec.active_option;
        let act = policy.act(exec, s, rng);
        let param = match mode {
            ParamMode::AveragedKernel => mdp.params(s).sample(rng),
            ParamMode::PerTrajectoryParam => *fixed[s].get_or_insert_with(|| mdp.params(s).sample(rng)),
        };
        let (next, cost) = mdp.step(param, s, act.action, rng)?;
        steps.push(StepRecord {
            state: s,
            prev_option,
            terminated_option: act.terminated,
            selected: act.selected,
            option: act.option,
            action: act.action,
            cost,
            next_state: next,
            param,
        });
        exec = act.exec;
        s = next;
    }
    Ok(Episode { steps })
}

/// `n` episodes; episode `k` uses stream `offset + k` of `seed`.
pub fn sample_batch(
    mdp: &RobustMdp,
    policy: &OptionPolicySet,
    mode: ParamMode,
    n: usize,
    seed: u64,
    offset: u64,
) -> Result<TrajectoryBatch> {
    let episodes = (0..n)
        .into_par_iter()
        .map(|k| rollout(mdp, policy, mode, &mut episode_rng(seed, offset + k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch {
        episodes,
        seed,
        discount: mdp.discount(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust_mdp::{Outcome, ParamSet, RobustMdpParts};

    /// One decision state with a two-valued parameter; outcome = which parameter was used.
    fn mixture_mdp() -> RobustMdp {
        let params = vec![
            ParamSet::new(vec![0.0, 1.0], vec![0.3, 0.7]).unwrap(),
            ParamSet::point(0.0),
            ParamSet::point(0.0),
            ParamSet::point(0.0),
        ];
        let kernel = vec![
            vec![vec![
                vec![Outcome::new(1, 0.0, 0.6), Outcome::new(2, 0.0, 0.4)],
                vec![Outcome::new(1, 0.0, 0.1), Outcome::new(3, 0.0, 0.9)],
            ]],
            vec![],
            vec![],
            vec![],
        ];
        RobustMdp::new(RobustMdpParts {
            n_states: 4,
            n_actions: 1,
            params,
            kernel,
            initial: vec![1.0, 0.0, 0.0, 0.0],
            terminal: vec![false, true, true, true],
            discount: 1.0,
            horizon: 3,
            cost_bound: 1.0,
            state_names: None,
        })
        .unwrap()
    }

    #[test]
    fn per_visit_sampling_matches_average_transition() {
        let mdp = mixture_mdp();
        let pol = OptionPolicySet::uniform(4, 1, 1);
        let n = 100_000;
        let batch = sample_batch(&mdp, &pol, ParamMode::AveragedKernel, n, 42, 0).unwrap();
        let avg = mdp.average_transition(0, 0).unwrap();
        let mut counts = [0usize; 4];
        for e in &batch.episodes {
            counts[e.steps[0].next_state] += 1;
        }
        for s in 0..4 {
            let f = counts[s] as f64 / n as f64;
            let se = (avg[s] * (1.0 - avg[s]) / n as f64).sqrt();
            assert!((f - avg[s]).abs() <= 3.0 * se + 1e-15, "state {s}: {f} vs {}", avg[s]);
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let mdp = mixture_mdp();
        let pol = OptionPolicySet::uniform(4, 2, 1);
        let a = sample_batch(&mdp, &pol, ParamMode::PerTrajectoryParam, 200, 5, 0).unwrap();
        let b = sample_batch(&mdp, &pol, ParamMode::PerTrajectoryParam, 200, 5, 0).unwrap();
        assert_eq!(a, b);
        a.validate(&mdp).unwrap();
    }
}
