//! Slack-state augmentation that turns the CVaR hinge into an ordinary
//! terminal cost.
//!
//! The slack starts at `x₀ = v` and evolves as `x' = (x − c)/γ`, so that after
//! `n` steps `γ^n · max(0, −x_n) = max(0, 𝒞 − v)`. An augmented episode
//! carries one extra record at time `n` (the transition into termination or
//! truncation) whose base cost is zero and whose channel costs hold the
//! hinge. With that convention both channel identities are exact for every
//! `γ ∈ (0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::option_policy::OptionPolicySet;
use crate::robust_mdp::{Episode, RobustMdp};
use crate::rollout::{rollout, ParamMode};
use rand_chacha::ChaCha8Rng;

pub fn x_init(v: f64) -> f64 {
    v
}

pub fn x_update(x: f64, c: f64, gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Err(Error::Domain("slack update is undefined for a zero discount".into()));
    }
    Ok((x - c) / gamma)
}

/// `𝒞 + λ·max(0, 𝒞 − v)/ε`.
pub fn prime_closed_form(loss: f64, lambda: f64, epsilon: f64, v: f64) -> f64 {
    loss + lambda * (loss - v).max(0.0) / epsilon
}

/// `max(0, 𝒞 − v)`.
pub fn dprime_closed_form(loss: f64, v: f64) -> f64 {
    (loss - v).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedStep {
    /// Base state; for the closing record, the state the episode ended in.
    pub s: usize,
    /// Slack before this record's cost is applied.
    pub x: f64,
    pub c: f64,
    pub c_prime: f64,
    pub c_dprime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedEpisode {
    /// `n` step records followed by the closing record.
    pub steps: Vec<AugmentedStep>,
}

fn channel_sum(values: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut g = 1.0;
    for v in values {
        total += g * v;
        g *= gamma;
    }
    total
}

impl AugmentedEpisode {
    pub fn loss(&self, gamma: f64) -> f64 {
        channel_sum(self.steps.iter().map(|s| s.c), gamma)
    }

    pub fn loss_prime(&self, gamma: f64) -> f64 {
        channel_sum(self.steps.iter().map(|s| s.c_prime), gamma)
    }

    pub fn loss_dprime(&self, gamma: f64) -> f64 {
        channel_sum(self.steps.iter().map(|s| s.c_dprime), gamma)
    }

    /// Final slack `x_n`.
    pub fn final_slack(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.x)
    }
}

/// Builds the augmented channels from raw costs with a pluggable slack update.
///
/// `update` is normally [`x_update`]; verification suites swap in corrupted
/// versions to confirm the identity checks notice.
pub fn augment_costs_with<F>(
    states: &[usize],
    final_state: usize,
    costs: &[f64],
    lambda: f64,
    epsilon: f64,
    v: f64,
    gamma: f64,
    update: F,
) -> Result<AugmentedEpisode>
where
    F: Fn(f64, f64, f64) -> Result<f64>,
{
    check_lagrange(lambda, epsilon)?;
    let mut x = x_init(v);
    let mut steps = Vec::with_capacity(costs.len() + 1);
    for (&s, &c) in states.iter().zip(costs) {
        steps.push(AugmentedStep {
            s,
            x,
            c,
            c_prime: c,
            c_dprime: 0.0,
        });
        x = update(x, c, gamma)?;
    }
    let hinge = (-x).max(0.0);
    steps.push(AugmentedStep {
        s: final_state,
        x,
        c: 0.0,
        c_prime: lambda * hinge / epsilon,
        c_dprime: hinge,
    });
    Ok(AugmentedEpisode { steps })
}

pub fn augment_episode(episode: &Episode, lambda: f64, epsilon: f64, v: f64, gamma: f64) -> Result<AugmentedEpisode> {
    let states: Vec<usize> = episode.steps.iter().map(|s| s.state).collect();
    let final_state = episode.steps.last().map_or(0, |s| s.next_state);
    augment_costs_with(&states, final_state, &episode.costs(), lambda, epsilon, v, gamma, x_update)
}

fn check_lagrange(lambda: f64, epsilon: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {lambda}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(())
}

/// A robust MDP together with the Lagrangian quantities that define the
/// augmented cost channels.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedMdp<'a> {
    pub base: &'a RobustMdp,
    pub lambda: f64,
    pub epsilon: f64,
    pub v: f64,
}

impl<'a> AugmentedMdp<'a> {
    pub fn new(base: &'a RobustMdp, lambda: f64, epsilon: f64, v: f64) -> Result<Self> {
        check_lagrange(lambda, epsilon)?;
        Ok(Self {
            base,
            lambda,
            epsilon,
            v,
        })
    }

    pub fn augment(&self, episode: &Episode) -> Result<AugmentedEpisode> {
        augment_episode(episode, self.lambda, self.epsilon, self.v, self.base.discount())
    }

    /// Samples a base episode and its augmented view. The slack is pure
    /// bookkeeping, so the base episode is exactly what [`rollout`] produces
    /// from the same rng.
    pub fn rollout(
        &self,
        policy: &OptionPolicySet,
        mode: ParamMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Episode, AugmentedEpisode)> {
        let episode = rollout(self.base, policy, mode, rng)?;
        let aug = self.augment(&episode)?;
        Ok((episode, aug))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust_mdp::trajectory_loss;
    use rand::{Rng, SeedableRng};

    fn aug(costs: &[f64], lambda: f64, eps: f64, v: f64, gamma: f64) -> AugmentedEpisode {
        let states = vec![0; costs.len()];
        augment_costs_with(&states, 0, costs, lambda, eps, v, gamma, x_update).unwrap()
    }

    #[test]
    fn x_update_examples() {
        assert!((x_update(1.0, 0.3, 0.9).unwrap() - 0.7 / 0.9).abs() < 1e-12);
        let mut x = x_init(3.5);
        for _ in 0..20 {
            x = x_update(x, 0.0, 1.0).unwrap();
        }
        assert_eq!(x, 3.5);
        assert!(matches!(x_update(1.0, 1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn slack_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let n = rng.gen_range(1..15);
            let gamma = [0.9, 0.99, 1.0][rng.gen_range(0..3)];
            let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v = rng.gen_range(-10.0..10.0);
            let mut x = x_init(v);
            for &c in &costs {
                x = x_update(x, c, gamma).unwrap();
            }
            let lhs = gamma.powi(n) * (-x).max(0.0);
            // independent reverse-order accumulation of the loss
            let loss: f64 = costs.iter().enumerate().rev().map(|(t, c)| gamma.powi(t as i32) * c).sum();
            assert!((lhs - (loss - v).max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn worked_example() {
        let a = aug(&[1.0, 2.0], 0.5, 0.1, 2.0, 1.0);
        assert_eq!(a.loss(1.0), 3.0);
        assert!((a.loss_prime(1.0) - 8.0).abs() < 1e-12);
        assert!((a.loss_dprime(1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_hinge() {
        let a = aug(&[1.0, -2.0, 0.5], 3.0, 0.2, 10.0, 0.9);
        let c = trajectory_loss(&[1.0, -2.0, 0.5], 0.9);
        assert!((a.loss_prime(0.9) - c).abs() < 1e-12);
        assert_eq!(a.loss_dprime(0.9), 0.0);
    }

    #[test]
    fn rejects_bad_lagrange_values() {
        assert!(augment_costs_with(&[0], 0, &[1.0], -1.0, 0.1, 0.0, 1.0, x_update).is_err());
        assert!(augment_costs_with(&[0], 0, &[1.0], 1.0, 1.0, 0.0, 1.0, x_update).is_err());
    }

    proptest::proptest! {
        #[test]
        fn channel_identities(
            costs in proptest::collection::vec(-5.0f64..5.0, 1..20),
            gi in 0usize..3,
            lambda in 0.0f64..5.0,
            eps in 0.01f64..0.99,
            v in -20.0f64..20.0,
        ) {
            let gamma = [0.9, 0.99, 1.0][gi];
            let a = aug(&costs, lambda, eps, v, gamma);
            let c = trajectory_loss(&costs, gamma);
            proptest::prop_assert!((a.loss_prime(gamma) - prime_closed_form(c, lambda, eps, v)).abs() <= 1e-9);
            proptest::prop_assert!((a.loss_dprime(gamma) - dprime_closed_form(c, v)).abs() <= 1e-9);
            proptest::prop_assert!(a.loss_dprime(gamma) >= 0.0);
            proptest::prop_assert!(a.loss_prime(gamma) >= c - 1e-12);
        }
    }
}
