//! Comparison policies: sliding-window linear UCB, EXP3.S with uniform weight
//! sharing, and uniform random play.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, LinalgError, RegressionState};
use crate::policy::{argmax_lowest, check_arm_set, Feedback, Policy, PolicyError};

/// Linear UCB over the most recent `window` samples.
#[derive(Debug, Clone)]
pub struct SwUcb {
    name: String,
    dim: usize,
    window: usize,
    lambda: f64,
    beta: f64,
    buffer: VecDeque<(Vec<f64>, f64)>,
    fit: RegressionState,
    rebuilds: usize,
    pending: bool,
}

impl SwUcb {
    pub fn new(dim: usize, window: usize, lambda: f64, beta: f64) -> Result<Self, PolicyError> {
        if window == 0 {
            return Err(PolicyError::Config("window must be positive".into()));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(PolicyError::Config(format!("beta {beta} must be >= 0")));
        }
        Ok(Self {
            name: "sw-ucb".into(),
            dim,
            window,
            lambda,
            beta,
            buffer: VecDeque::with_capacity(window + 1),
            fit: RegressionState::new(dim, lambda)?,
            rebuilds: 0,
            pending: false,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn fit(&self) -> &RegressionState {
        &self.fit
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Times the downdate path fell back to a full rebuild.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn scores(&self, arm_set: &[Vec<f64>]) -> Result<Vec<f64>, PolicyError> {
        arm_set
            .iter()
            .map(|a| Ok(dot(a, self.fit.estimate()) + self.beta * self.fit.bonus_norm(a)?))
            .collect()
    }

    fn rebuild(&mut self) -> Result<(), LinalgError> {
        self.rebuilds += 1;
        let mut fit = RegressionState::new(self.dim, self.lambda)?;
        for (a, r) in &self.buffer {
            fit.rank1_update(a, *r, 1.0)?;
        }
        self.fit = fit;
        Ok(())
    }
}

impl Policy for SwUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        check_arm_set(arm_set, self.dim)?;
        let scores = self.scores(arm_set)?;
        self.pending = true;
        Ok(argmax_lowest(scores).expect("arm set checked non-empty"))
    }

    fn observe(&mut self, fb: Feedback<'_>) -> Result<(), PolicyError> {
        if !self.pending {
            return Err(PolicyError::NoPendingChoice);
        }
        self.pending = false;
        if self.buffer.len() == self.window {
            let (old_arm, old_r) = self.buffer.pop_front().expect("window is non-empty");
            match self.fit.rank1_downdate(&old_arm, old_r, 1.0) {
                Ok(()) => {}
                Err(LinalgError::NotPositiveDefinite) => self.rebuild()?,
                Err(e) => return Err(e.into()),
            }
        }
        self.fit.rank1_update(fb.arm, fb.reward, 1.0)?;
        self.buffer.push_back((fb.arm.to_vec(), fb.reward));
        Ok(())
    }
}

/// EXP3.S over a fixed arm set. Rewards are clipped to `[0, 1]`.
///
/// Weights are renormalized to sum to one after every update; the sampling
/// rule and the sharing term only depend on weight ratios.
#[derive(Debug, Clone)]
pub struct Exp3S {
    name: String,
    arms: Option<Vec<Vec<f64>>>,
    alpha_bar: f64,
    gamma_bar: f64,
    weights: Vec<f64>,
    probs: Vec<f64>,
    rng: ChaCha8Rng,
    pending: Option<usize>,
}

impl Exp3S {
    pub fn new(alpha_bar: f64, gamma_bar: f64, rng: ChaCha8Rng) -> Result<Self, PolicyError> {
        if !(gamma_bar > 0.0 && gamma_bar <= 1.0) {
            return Err(PolicyError::Config(format!(
                "gamma_bar {gamma_bar} must lie in (0, 1]"
            )));
        }
        if !(alpha_bar >= 0.0 && alpha_bar.is_finite()) {
            return Err(PolicyError::Config(format!(
                "alpha_bar {alpha_bar} must be >= 0"
            )));
        }
        Ok(Self {
            name: "modified-exp3.s".into(),
            arms: None,
            alpha_bar,
            gamma_bar,
            weights: Vec::new(),
            probs: Vec::new(),
            rng,
            pending: None,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sampling distribution used for the most recent choice.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    fn distribution(&self) -> Vec<f64> {
        let n = self.weights.len() as f64;
        let total: f64 = self.weights.iter().sum();
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma_bar) * w / total + self.gamma_bar / n)
            .collect()
    }
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Policy for Exp3S {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        if arm_set.is_empty() {
            return Err(PolicyError::EmptyArmSet);
        }
        match &self.arms {
            None => {
                self.arms = Some(arm_set.to_vec());
                self.weights = vec![1.0 / arm_set.len() as f64; arm_set.len()];
            }
            Some(arms) if arms.as_slice() != arm_set => return Err(PolicyError::ArmSetChanged),
            Some(_) => {}
        }
        self.probs = self.distribution();
        let u: f64 = self.rng.random();
        let i = sample_index(&self.probs, u);
        self.pending = Some(i);
        Ok(i)
    }

    fn observe(&mut self, fb: Feedback<'_>) -> Result<(), PolicyError> {
        let chosen = self.pending.take().ok_or(PolicyError::NoPendingChoice)?;
        let n = self.weights.len() as f64;
        let x = fb.reward.clamp(0.0, 1.0);
        let estimate = x / self.probs[chosen];
        let total: f64 = self.weights.iter().sum();
        let share = std::f64::consts::E * self.alpha_bar / n * total;
        for (i, w) in self.weights.iter_mut().enumerate() {
            let gain = if i == chosen {
                (self.gamma_bar * estimate / n).exp()
            } else {
                1.0
            };
            *w = *w * gain + share;
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }
}

/// Picks uniformly at random among the offered arms.
#[derive(Debug, Clone)]
pub struct UniformRandom {
    name: String,
    rng: ChaCha8Rng,
}

impl UniformRandom {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self {
            name: "uniform".into(),
            rng,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Policy for UniformRandom {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        if arm_set.is_empty() {
            return Err(PolicyError::EmptyArmSet);
        }
        Ok(self.rng.random_range(0..arm_set.len()))
    }

    fn observe(&mut self, _fb: Feedback<'_>) -> Result<(), PolicyError> {
        Ok(())
    }
}
