//! Policies share one interaction loop: `choose` an arm from the round's arm
//! set, then `observe` the reward for that arm.

use thiserror::Error;

use crate::linalg::LinalgError;

mod save;
mod woful;

pub use save::{
    num_layers_for_alpha, save_radius, save_var_threshold_met, Commit, Layer, SaveConfig,
    SavePolicy, SaveRadiusMode,
};
pub use woful::{
    woful_radius, woful_sigma_bar, RadiusMode, WofulConfig, WofulPolicy, WofulRadiusParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("arm set is empty")]
    EmptyArmSet,
    #[error("arm has dimension {got}, policy expects {expected}")]
    ArmDimension { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("this policy needs the per-round variance but none was revealed")]
    MissingVariance,
    #[error("this policy needs a fixed arm set, but the arm set changed")]
    ArmSetChanged,
    #[error("observe called without a preceding choose")]
    NoPendingChoice,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Feedback for the arm returned by the last [`Policy::choose`].
#[derive(Debug, Clone, Copy)]
pub struct Feedback<'a> {
    pub arm_index: usize,
    pub arm: &'a [f64],
    pub reward: f64,
    /// Noise standard deviation for this round, present only in
    /// known-variance runs.
    pub sigma: Option<f64>,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError>;

    fn observe(&mut self, feedback: Feedback<'_>) -> Result<(), PolicyError>;
}

/// Index of the largest score; ties go to the lowest index and NaN never wins.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = f64>>(scores: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn check_arm_set(arm_set: &[Vec<f64>], dim: usize) -> Result<(), PolicyError> {
    if arm_set.is_empty() {
        return Err(PolicyError::EmptyArmSet);
    }
    if let Some(a) = arm_set.iter().find(|a| a.len() != dim) {
        return Err(PolicyError::ArmDimension {
            expected: dim,
            got: a.len(),
        });
    }
    Ok(())
}

/// `ceil` that ignores floating-point fuzz just above an integer.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}
