//! Restarted multi-layer weighted regression for the unknown-variance setting.
//!
//! Layer `l` (1-based) keeps a ridge regression with regularizer `2^{-2l}`.
//! A round is routed to the shallowest layer in which the chosen arm is still
//! uncertain (`||a||_{Sigma_l^{-1}} >= 2^{-l}`) and enters it with weight
//! `2^{-l} / ||a||_{Sigma_l^{-1}}`. Rounds certain in every layer only bump the
//! overflow counter.

use serde::{Deserialize, Serialize};

use super::{argmax_lowest, ceil_tolerant, check_arm_set, Feedback, Policy, PolicyError};
use crate::linalg::{dot, RegressionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveRadiusMode {
    Theoretical,
    /// Radius of layer `l` pinned to `2^{-l+1}`.
    FixedPowers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaveConfig {
    pub window: usize,
    pub alpha: f64,
    /// Overrides the layer count derived from `alpha`.
    pub layers: Option<usize>,
    pub theta_bound: f64,
    pub noise_bound: f64,
    pub delta: f64,
    pub radius: SaveRadiusMode,
}

impl Default for SaveConfig {
    fn default() -> Self {
        Self {
            window: 1000,
            alpha: 1.0 / 64.0,
            layers: None,
            theta_bound: 1.0,
            noise_bound: 1.0,
            delta: 0.01,
            radius: SaveRadiusMode::FixedPowers,
        }
    }
}

impl SaveConfig {
    pub fn num_layers(&self) -> usize {
        self.layers
            .unwrap_or_else(|| num_layers_for_alpha(self.alpha))
    }
}

/// `ceil(log2(1/alpha))`, or 1 when `alpha >= 1`.
pub fn num_layers_for_alpha(alpha: f64) -> usize {
    if alpha >= 1.0 {
        1
    } else {
        (ceil_tolerant((1.0 / alpha).log2()) as usize).max(1)
    }
}

/// One layer's regression plus the statistics needed for its variance
/// estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fit: RegressionState,
    pub radius: f64,
    /// `sum w_i^2 r_i^2` over the layer's samples.
    pub sum_wr2: f64,
    /// Number of rounds routed to this layer in the current window.
    pub count: usize,
}

impl Layer {
    fn fresh(dim: usize, level: usize) -> Self {
        Self {
            fit: RegressionState::new(dim, pow2(-2 * level as i32)).expect("positive regularizer"),
            radius: pow2(1 - level as i32),
            sum_wr2: 0.0,
            count: 0,
        }
    }

    pub fn ucb(&self, arm: &[f64]) -> Result<f64, PolicyError> {
        Ok(dot(arm, self.fit.estimate()) + self.radius * self.fit.bonus_norm(arm)?)
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// The round's routing decision when it entered a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Commit {
    pub layer: usize,
    pub weight: f64,
    pub norm: f64,
}

/// `log(4 (w+1)^2 L / delta)`.
fn log_term_var(window: usize, layers: usize, delta: f64) -> f64 {
    let w1 = window as f64 + 1.0;
    (4.0 * w1 * w1 * layers as f64 / delta).ln()
}

/// `log(4 w^2 L / delta)`.
fn log_term_radius(window: usize, layers: usize, delta: f64) -> f64 {
    let w = window as f64;
    (4.0 * w * w * layers as f64 / delta).ln()
}

/// Whether layer `level` is deep enough to use the empirical residual sum as
/// its variance estimate.
pub fn save_var_threshold_met(level: usize, window: usize, layers: usize, delta: f64) -> bool {
    pow2(level as i32) >= 64.0 * log_term_var(window, layers, delta).sqrt()
}

/// Adaptive radius of layer `level` given its variance estimate.
pub fn save_radius(
    level: usize,
    var_estimate: f64,
    window: usize,
    layers: usize,
    delta: f64,
    noise_bound: f64,
    theta_bound: f64,
) -> f64 {
    let scale = pow2(-(level as i32));
    let lv = log_term_var(window, layers, delta);
    let lr = log_term_radius(window, layers, delta);
    let r2 = noise_bound * noise_bound;
    16.0 * scale
        * (8.0 * var_estimate + 6.0 * r2 * lv + pow2(4 - 2 * level as i32)).sqrt()
        * lr.sqrt()
        + 6.0 * scale * noise_bound * lr
        + scale * theta_bound
}

#[derive(Debug, Clone)]
pub struct SavePolicy {
    name: String,
    cfg: SaveConfig,
    dim: usize,
    layers: Vec<Layer>,
    overflow_count: usize,
    round: usize,
    pending: bool,
    last_commit: Option<Commit>,
}

impl SavePolicy {
    pub fn new(dim: usize, cfg: SaveConfig) -> Result<Self, PolicyError> {
        if dim == 0 {
            return Err(PolicyError::Config("dimension must be positive".into()));
        }
        if cfg.window == 0 {
            return Err(PolicyError::Config("window must be positive".into()));
        }
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(PolicyError::Config(format!(
                "alpha {} must be > 0",
                cfg.alpha
            )));
        }
        if cfg.layers == Some(0) {
            return Err(PolicyError::Config("need at least one layer".into()));
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(PolicyError::Config("delta must lie in (0, 1)".into()));
        }
        if !(cfg.noise_bound > 0.0) {
            return Err(PolicyError::Config("noise bound must be > 0".into()));
        }
        let layers = Self::fresh_layers(dim, cfg.num_layers());
        Ok(Self {
            name: "restarted-save+".into(),
            dim,
            layers,
            overflow_count: 0,
            round: 0,
            pending: false,
            last_commit: None,
            cfg,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn fresh_layers(dim: usize, n: usize) -> Vec<Layer> {
        (1..=n).map(|l| Layer::fresh(dim, l)).collect()
    }

    pub fn config(&self) -> &SaveConfig {
        &self.cfg
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer `level`, 1-based.
    pub fn layer(&self, level: usize) -> &Layer {
        &self.layers[level - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn overflow_count(&self) -> usize {
        self.overflow_count
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn last_commit(&self) -> Option<Commit> {
        self.last_commit
    }

    /// Shallowest layer in which `arm` is uncertain, or `L + 1`.
    pub fn layer_select(&self, arm: &[f64]) -> Result<usize, PolicyError> {
        for (i, layer) in self.layers.iter().enumerate() {
            let level = i + 1;
            if layer.fit.bonus_norm(arm)? >= pow2(-(level as i32)) {
                return Ok(level);
            }
        }
        Ok(self.layers.len() + 1)
    }

    /// `2^{-l} / ||arm||_{Sigma_l^{-1}}`.
    pub fn weight(&self, arm: &[f64], level: usize) -> Result<f64, PolicyError> {
        let norm = self.layer(level).fit.bonus_norm(arm)?;
        if norm <= 0.0 {
            return Err(PolicyError::Config(
                "zero bonus norm: arm must be non-zero".into(),
            ));
        }
        Ok(pow2(-(level as i32)) / norm)
    }

    /// Variance estimate of layer `level` at its current estimate.
    pub fn var_estimate(&self, level: usize) -> f64 {
        let layer = self.layer(level);
        if layer.count == 0 {
            return 0.0;
        }
        if save_var_threshold_met(level, self.cfg.window, self.layers.len(), self.cfg.delta) {
            layer
                .fit
                .weighted_residual_sum(layer.sum_wr2, layer.fit.estimate())
                .max(0.0)
        } else {
            self.cfg.noise_bound * self.cfg.noise_bound * layer.count as f64
        }
    }

    pub fn radius_for(&self, level: usize) -> f64 {
        match self.cfg.radius {
            SaveRadiusMode::FixedPowers => pow2(1 - level as i32),
            SaveRadiusMode::Theoretical => save_radius(
                level,
                self.var_estimate(level),
                self.cfg.window,
                self.layers.len(),
                self.cfg.delta,
                self.cfg.noise_bound,
                self.cfg.theta_bound,
            ),
        }
    }

    /// Minimum over layers of each arm's UCB.
    pub fn scores(&self, arm_set: &[Vec<f64>]) -> Result<Vec<f64>, PolicyError> {
        arm_set
            .iter()
            .map(|a| {
                self.layers
                    .iter()
                    .try_fold(f64::INFINITY, |m, layer| Ok(m.min(layer.ucb(a)?)))
            })
            .collect()
    }

    /// Overwrites one layer. Intended for constructing specific states in
    /// tests and notebooks.
    pub fn set_layer(&mut self, level: usize, layer: Layer) {
        self.layers[level - 1] = layer;
    }

    fn restart(&mut self) {
        self.layers = Self::fresh_layers(self.dim, self.layers.len());
        self.overflow_count = 0;
    }
}

impl Policy for SavePolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        check_arm_set(arm_set, self.dim)?;
        self.round += 1;
        if self.round.is_multiple_of(self.cfg.window) {
            self.restart();
        }
        let scores = self.scores(arm_set)?;
        self.pending = true;
        Ok(argmax_lowest(scores).expect("arm set checked non-empty"))
    }

    fn observe(&mut self, fb: Feedback<'_>) -> Result<(), PolicyError> {
        if !self.pending {
            return Err(PolicyError::NoPendingChoice);
        }
        self.pending = false;
        let level = self.layer_select(fb.arm)?;
        if level > self.layers.len() {
            self.overflow_count += 1;
            self.last_commit = None;
            return Ok(());
        }
        let norm = self.layer(level).fit.bonus_norm(fb.arm)?;
        let weight = self.weight(fb.arm, level)?;
        let w2 = weight * weight;
        {
            let layer = &mut self.layers[level - 1];
            layer.fit.rank1_update(fb.arm, fb.reward, w2)?;
            layer.sum_wr2 += w2 * fb.reward * fb.reward;
            layer.count += 1;
        }
        let radius = self.radius_for(level);
        self.layers[level - 1].radius = radius;
        self.last_commit = Some(Commit {
            layer: level,
            weight,
            norm,
        });
        Ok(())
    }
}
