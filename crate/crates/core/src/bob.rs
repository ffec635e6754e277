//! Bandits-over-bandits: Exp3 picks a `(window, alpha)` pair for each block of
//! `H` rounds and runs a fresh multi-layer policy with it; the block's summed
//! reward, rescaled to roughly `[0, 1]`, is the meta-level feedback.
//!
//! Exp3 weights are held as `log s`. The printed sampling rule sums to
//! `1 - gamma/(|P|+1)` over the playable candidates, so it is renormalized
//! before sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::sample_index;
use crate::policy::{
    ceil_tolerant, Feedback, Policy, PolicyError, SaveConfig, SavePolicy, SaveRadiusMode,
};

/// Source of uniform draws in `[0, 1)` for the meta-level choice.
pub trait UniformSource: Send {
    fn next_uniform(&mut self) -> f64;
}

impl UniformSource for ChaCha8Rng {
    fn next_uniform(&mut self) -> f64 {
        self.random()
    }
}

/// Replays a fixed list of draws, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedUniform {
    draws: Vec<f64>,
    next: usize,
}

impl ScriptedUniform {
    pub fn new(draws: Vec<f64>) -> Self {
        assert!(!draws.is_empty(), "need at least one scripted draw");
        Self { draws, next: 0 }
    }
}

impl UniformSource for ScriptedUniform {
    fn next_uniform(&mut self) -> f64 {
        let u = self.draws[self.next % self.draws.len()];
        self.next += 1;
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub window: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub pairs: Vec<Candidate>,
    /// Window and alpha grid sizes before rounding and deduplication.
    pub raw_windows: usize,
    pub raw_alphas: usize,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn raw_len(&self) -> usize {
        self.raw_windows * self.raw_alphas
    }
}

/// `ceil(d^{2/5} K^{2/5})`.
pub fn block_length(dim: usize, horizon: usize) -> usize {
    (ceil_tolerant((dim as f64).powf(0.4) * (horizon as f64).powf(0.4)) as usize).max(1)
}

fn family_len(fraction: f64, horizon: usize) -> usize {
    ceil_tolerant(fraction * (horizon as f64).log2()).max(0.0) as usize + 1
}

/// The `(window, alpha)` grid. Windows are rounded up and capped at the block
/// length; duplicates produced by rounding are dropped.
pub fn build_pool(dim: usize, horizon: usize) -> CandidatePool {
    let d = dim as f64;
    let h = block_length(dim, horizon);
    let geometric = |scale: f64, n: usize, up: bool| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let step = 2f64.powi(i as i32);
                if up {
                    scale * step
                } else {
                    scale / step
                }
            })
            .collect()
    };
    let n_w1 = family_len(1.0 / 3.0, horizon);
    let n_w2 = family_len(2.0 / 5.0, horizon);
    let n_a1 = family_len(1.0 / 3.0, horizon);
    let n_a2 = family_len(11.0 / 30.0, horizon);

    let mut windows: Vec<usize> = geometric(d.powf(1.0 / 3.0), n_w1, true)
        .into_iter()
        .chain(geometric(d.powf(0.4), n_w2, true))
        .map(|w| (ceil_tolerant(w) as usize).clamp(1, h))
        .collect();
    windows.sort_unstable();
    windows.dedup();

    let mut alphas: Vec<f64> = geometric(d.powf(1.0 / 3.0), n_a1, false)
        .into_iter()
        .chain(geometric(d.powf(11.0 / 30.0), n_a2, false))
        .collect();
    alphas.sort_by(|a, b| b.partial_cmp(a).expect("finite alphas"));
    alphas.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());

    let pairs = windows
        .iter()
        .flat_map(|&window| alphas.iter().map(move |&alpha| Candidate { window, alpha }))
        .collect();
    CandidatePool {
        pairs,
        raw_windows: n_w1 + n_w2,
        raw_alphas: n_a1 + n_a2,
    }
}

/// `min(1, sqrt((|P|+1) ln(|P|+1) / ((e-1) ceil(K/H))))`.
pub fn exp3_gamma(pool_size: usize, horizon: usize, block: usize) -> f64 {
    let n = pool_size as f64 + 1.0;
    let blocks = horizon.div_ceil(block) as f64;
    (n * n.ln() / ((std::f64::consts::E - 1.0) * blocks))
        .sqrt()
        .min(1.0)
}

/// Divides a block's total reward by its high-probability range.
pub fn rescale_block_reward(total: f64, block: usize, horizon: usize, noise_bound: f64) -> f64 {
    let h = block as f64;
    let k = horizon as f64;
    let log_term = (k * (k / h + 1.0)).ln();
    total / (h + noise_bound * (h / 2.0 * log_term).sqrt() + 2.0 / 3.0 * noise_bound * log_term)
}

/// Renormalized Exp3 distribution from log-weights.
pub fn exp3_distribution(log_s: &[f64], gamma: f64) -> Vec<f64> {
    let n = log_s.len() as f64;
    let max = log_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = log_s.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let raw: Vec<f64> = exp
        .iter()
        .map(|e| (1.0 - gamma) * e / total + gamma / (n + 1.0))
        .collect();
    let mass: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / mass).collect()
}

/// `log s_j += gamma / ((|P|+1) p_j) * (1/2 + reward)`.
pub fn exp3_update(log_s: &mut [f64], chosen: usize, prob: f64, gamma: f64, reward: f64) {
    let n = log_s.len() as f64;
    log_s[chosen] += gamma / ((n + 1.0) * prob) * (0.5 + reward);
}

/// Per-block record of the meta-learner.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub candidate: usize,
    pub prob: f64,
    pub distribution: Vec<f64>,
    pub total_reward: f64,
    pub rescaled_reward: f64,
    pub log_s_after: Vec<f64>,
}

/// Settings shared by every inner policy instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BobConfig {
    pub theta_bound: f64,
    pub noise_bound: f64,
    pub delta: f64,
    pub radius: SaveRadiusMode,
}

impl Default for BobConfig {
    fn default() -> Self {
        Self {
            theta_bound: 1.0,
            noise_bound: 1.0,
            delta: 0.01,
            radius: SaveRadiusMode::Theoretical,
        }
    }
}

pub struct BobPolicy {
    name: String,
    dim: usize,
    horizon: usize,
    block: usize,
    pool: CandidatePool,
    gamma: f64,
    log_s: Vec<f64>,
    cfg: BobConfig,
    sampler: Box<dyn UniformSource>,
    round: usize,
    current: Option<(usize, f64, Vec<f64>)>,
    block_reward: f64,
    inner: Option<SavePolicy>,
    history: Vec<BlockRecord>,
}

impl std::fmt::Debug for BobPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BobPolicy")
            .field("block", &self.block)
            .field("pool", &self.pool.len())
            .field("gamma", &self.gamma)
            .field("round", &self.round)
            .finish_non_exhaustive()
    }
}

impl BobPolicy {
    pub fn new(
        dim: usize,
        horizon: usize,
        cfg: BobConfig,
        sampler: Box<dyn UniformSource>,
    ) -> Result<Self, PolicyError> {
        let block = block_length(dim, horizon);
        Self::with_block(dim, horizon, block, build_pool(dim, horizon), cfg, sampler)
    }

    /// Uses an explicit block length and candidate pool.
    pub fn with_block(
        dim: usize,
        horizon: usize,
        block: usize,
        pool: CandidatePool,
        cfg: BobConfig,
        sampler: Box<dyn UniformSource>,
    ) -> Result<Self, PolicyError> {
        if dim == 0 || horizon == 0 || block == 0 {
            return Err(PolicyError::Config(
                "dimension, horizon and block length must be positive".into(),
            ));
        }
        if pool.is_empty() {
            return Err(PolicyError::Config("candidate pool is empty".into()));
        }
        let gamma = exp3_gamma(pool.len(), horizon, block);
        Ok(Self {
            name: "restarted-save+-bob".into(),
            dim,
            horizon,
            block,
            log_s: vec![0.0; pool.len()],
            pool,
            gamma,
            cfg,
            sampler,
            round: 0,
            current: None,
            block_reward: 0.0,
            inner: None,
            history: Vec::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn block_length(&self) -> usize {
        self.block
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_s
    }

    pub fn history(&self) -> &[BlockRecord] {
        &self.history
    }

    pub fn inner(&self) -> Option<&SavePolicy> {
        self.inner.as_ref()
    }

    pub fn inner_config(&self, candidate: Candidate) -> SaveConfig {
        SaveConfig {
            window: candidate.window,
            alpha: candidate.alpha,
            layers: None,
            theta_bound: self.cfg.theta_bound,
            noise_bound: self.cfg.noise_bound,
            delta: self.cfg.delta,
            radius: self.cfg.radius,
        }
    }

    fn start_block(&mut self) -> Result<(), PolicyError> {
        let dist = exp3_distribution(&self.log_s, self.gamma);
        let j = sample_index(&dist, self.sampler.next_uniform());
        let cand = self.pool.pairs[j];
        self.inner = Some(SavePolicy::new(self.dim, self.inner_config(cand))?);
        self.current = Some((j, dist[j], dist));
        self.block_reward = 0.0;
        Ok(())
    }

    fn finish_block(&mut self) {
        let (j, p, dist) = self.current.take().expect("block in progress");
        let x = rescale_block_reward(
            self.block_reward,
            self.block,
            self.horizon,
            self.cfg.noise_bound,
        );
        exp3_update(&mut self.log_s, j, p, self.gamma, x);
        self.history.push(BlockRecord {
            candidate: j,
            prob: p,
            distribution: dist,
            total_reward: self.block_reward,
            rescaled_reward: x,
            log_s_after: self.log_s.clone(),
        });
    }
}

impl Policy for BobPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn choose(&mut self, arm_set: &[Vec<f64>]) -> Result<usize, PolicyError> {
        if self.round >= self.horizon {
            return Err(PolicyError::Config(format!(
                "round {} beyond the configured horizon {}",
                self.round + 1,
                self.horizon
            )));
        }
        self.round += 1;
        if (self.round - 1).is_multiple_of(self.block) {
            self.start_block()?;
        }
        self.inner.as_mut().expect("block started").choose(arm_set)
    }

    fn observe(&mut self, fb: Feedback<'_>) -> Result<(), PolicyError> {
        let inner = self.inner.as_mut().ok_or(PolicyError::NoPendingChoice)?;
        inner.observe(fb)?;
        self.block_reward += fb.reward;
        if self.round.is_multiple_of(self.block) || self.round == self.horizon {
            self.finish_block();
        }
        Ok(())
    }
}
