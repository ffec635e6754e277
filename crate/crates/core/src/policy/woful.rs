//! Restarted weighted OFUL for the known-variance setting.
//!
//! Each sample enters a ridge regression with weight `1 / sigma_bar^2`, where
//! `sigma_bar` floors the revealed noise level by `alpha` and by an
//! uncertainty term `gamma * ||a||^{1/2}`. All statistics are discarded at
//! rounds `k` with `k % window == 0`.

use serde::{Deserialize, Serialize};

use super::{argmax_lowest, check_arm_set, Feedback, Policy, PolicyError};
use crate::linalg::{dot, RegressionState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    Theoretical,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WofulConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub window: usize,
    pub theta_bound: f64,
    pub arm_bound: f64,
    pub noise_bound: f64,
    pub delta: f64,
    pub radius: RadiusMode,
}

impl Default for WofulConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 1.0,
            gamma: 2.0,
            window: 1000,
            theta_bound: 1.0,
            arm_bound: 1.0,
            noise_bound: 1.0,
            delta: 0.01,
            radius: RadiusMode::Fixed(10.0),
        }
    }
}

/// Inputs of the theoretical confidence radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WofulRadiusParams {
    pub dim: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub arm_bound: f64,
    pub noise_bound: f64,
    pub theta_bound: f64,
    pub delta: f64,
}

impl WofulRadiusParams {
    fn validate(&self) -> Result<(), PolicyError> {
        let err = |m: &str| Err(PolicyError::Config(m.to_string()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return err("delta must lie in (0, 1)");
        }
        if !(self.gamma > 0.0) {
            return err("theoretical radius needs gamma > 0");
        }
        // The second logarithm takes log(gamma^2 / alpha) + 1 as a factor.
        if (self.gamma * self.gamma / self.alpha).ln() + 1.0 <= 0.0 {
            return err("theoretical radius needs log(gamma^2/alpha) + 1 > 0");
        }
        Ok(())
    }
}

/// `max(sigma, alpha, gamma * sqrt(bonus_norm))`.
pub fn woful_sigma_bar(sigma: f64, alpha: f64, gamma: f64, bonus_norm: f64) -> f64 {
    sigma.max(alpha).max(gamma * bonus_norm.sqrt())
}

/// Theoretical confidence radius for position `k_in_window = k % w`.
///
/// Position 0 is a restart and gets `sqrt(lambda) * B`. Elsewhere the two
/// logarithmic terms are evaluated as printed in the source analysis, where
/// the first uses `log(gamma^2/alpha + 1)` and the second
/// `log(gamma^2/alpha) + 1`; they are intentionally not harmonized.
pub fn woful_radius(k_in_window: usize, p: &WofulRadiusParams) -> f64 {
    let base = p.lambda.sqrt() * p.theta_bound;
    if k_in_window == 0 {
        return base;
    }
    let j = k_in_window as f64;
    let d = p.dim as f64;
    let ratio = p.gamma * p.gamma / p.alpha;
    let det_term = (1.0 + j * p.arm_bound * p.arm_bound / (p.alpha * p.alpha * d * p.lambda)).ln();
    let log_a = (32.0 * (ratio + 1.0).ln() * j * j / p.delta).ln();
    let log_b = (32.0 * (ratio.ln() + 1.0) * j * j / p.delta).ln();
    12.0 * (d * det_term * log_a).sqrt() + 30.0 * log_b * p.noise_bound / (p.gamma * p.gamma) + base
}

#[derive(Debug, Clone)]
pub struct WofulPolicy {
    name: String,
    cfg: WofulConfig,
    dim: usize,
    fit: RegressionState,
    /// Index of the current round (0 before the first `choose`).
    round: usize,
    samples_in_window: usize,
    radius: f64,
    pending: bool,
}

impl WofulPolicy {
    pub fn new(dim: usize, cfg: WofulConfig) -> Result<Self, PolicyError> {
        if dim == 0 {
            return Err(PolicyError::Config("dimension must be positive".into()));
        }
        if cfg.window == 0 {
            return Err(PolicyError::Config("window must be positive".into()));
        }
        if !(cfg.alpha > 0.0 && cfg.gamma >= 0.0 && cfg.lambda > 0.0) {
            return Err(PolicyError::Config(
                "need alpha > 0, gamma >= 0 and lambda > 0".into(),
            ));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(PolicyError::Config("delta must lie in (0, 1)".into()));
        }
        match cfg.radius {
            RadiusMode::Theoretical => radius_params(dim, &cfg).validate()?,
            RadiusMode::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                return Err(PolicyError::Config(format!(
                    "fixed radius {v} must be >= 0"
                )))
            }
            RadiusMode::Fixed(_) => {}
        }
        let fit = RegressionState::new(dim, cfg.lambda)?;
        Ok(Self {
            name: "restarted-woful+".into(),
            dim,
            fit,
            round: 0,
            samples_in_window: 0,
            radius: 0.0,
            pending: false,
            cfg,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &WofulConfig {
        &self.cfg
    }

    pub fn fit(&self) -> &RegressionState {
        &self.fit
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn samples_in_window(&self) -> usize {
        self.samples_in_window
    }

    /// Radius used for the current round's choice.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn current_radius(&self) -> f64 {
        match self.cfg.radius {
            RadiusMode::Fixed(v) => v,
            RadiusMode::Theoretical => {
                let pos = if self.samples_in_window == 0 {
                    0
                } else {
                    self.round % self.cfg.window
                };
                woful_radius(pos, &radius_params(self.dim, &self.cfg))
            }
        }
    }

    /// UCB score of every arm under the current statistics.
    pub fn scores(&self, arm_set: &[Vec<f64>]) -> Result<Vec<f64>, PolicyError> {
        arm_set
            .iter()
            .map(|a| Ok(dot(a, self.fit.estimate()) + self.radius * self.fit.bonus_norm(a)?))
            .collect()
    }
}

fn radius_params(dim: usize, cfg: &WofulConfig) -> WofulRadiusParams {
    WofulRadiusParams {
        dim,
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        arm_bound: cfg.arm_bound,
        noise_bound: cfg.noise_bound,
        theta_bound: cfg.theta_bound,
        delta: cfg.delta,
    }
}

impl Policy for WofulPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        check_arm_set(arm_set, self.dim)?;
        self.round += 1;
        if self.round.is_multiple_of(self.cfg.window) {
            self.fit.reset(self.cfg.lambda)?;
            self.samples_in_window = 0;
        }
        self.radius = self.current_radius();
        let scores = self.scores(arm_set)?;
        self.pending = true;
        Ok(argmax_lowest(scores).expect("arm set checked non-empty"))
    }

    fn observe(&mut self, fb: Feedback<'_>) -> Result<(), PolicyError> {
        if !self.pending {
            return Err(PolicyError::NoPendingChoice);
        }
        let sigma = fb.sigma.ok_or(PolicyError::MissingVariance)?;
        // Bonus against the covariance before this round's sample.
        let bonus = self.fit.bonus_norm(fb.arm)?;
        let sigma_bar = woful_sigma_bar(sigma, self.cfg.alpha, self.cfg.gamma, bonus);
        self.fit
            .rank1_update(fb.arm, fb.reward, 1.0 / (sigma_bar * sigma_bar))?;
        self.samples_in_window += 1;
        self.pending = false;
        Ok(())
    }
}
