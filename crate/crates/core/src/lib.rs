//! CVaR-constrained option-critic learning on robust MDPs.
//!
//! The crate has three layers:
//! - model types: [`robust_mdp`], [`option_policy`], [`augmentation`], [`risk`], [`envs`];
//! - an exact dynamic-programming oracle in [`exact`];
//! - sample-based trainers in [`trainers`] and the experiment harness in [`harness`].

pub mod augmentation;
pub mod envs;
pub mod error;
pub mod exact;
pub mod harness;
pub mod option_policy;
pub mod risk;
pub mod robust_mdp;
pub mod rollout;
pub mod trainers;

pub use error::{Error, Result};
pub use option_policy::OptionPolicySet;
pub use robust_mdp::{ParamDistSpec, ParamSet, RobustMdp};
