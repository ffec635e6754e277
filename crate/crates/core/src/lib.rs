//! Non-stationary linear bandits with heteroscedastic noise: sliding-window
//! variance-aware policies, baselines, a bandits-over-bandits tuner and an
//! experiment harness.

pub mod baselines;
pub mod bob;
pub mod env;
pub mod harness;
pub mod linalg;
pub mod policy;
