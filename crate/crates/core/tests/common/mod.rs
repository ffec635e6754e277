#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varband::policy::{Feedback, Policy, SavePolicy};

/// Arm sets of `n` random arms inside the unit ball.
pub fn random_arm_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense ridge solution `(reg I + sum w a a^T)^{-1} sum w r a` and its Gram matrix.
pub fn ridge(d: usize, reg: f64, xs: &[(Vec<f64>, f64, f64)]) -> (DMatrix<f64>, DVector<f64>) {
    let mut cov = DMatrix::<f64>::identity(d, d) * reg;
    let mut b = DVector::<f64>::zeros(d);
    for (a, r, w2) in xs {
        let a = DVector::from_column_slice(a);
        cov += &a * a.transpose() * *w2;
        b += &a * (*w2 * *r);
    }
    let theta = cov
        .clone()
        .lu()
        .solve(&b)
        .expect("ridge system is nonsingular");
    (cov, theta)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One committed SAVE round: `(round, layer, weight, norm, arm, reward)`.
#[derive(Debug, Clone)]
pub struct SaveStep {
    pub round: usize,
    pub layer: Option<usize>,
    pub weight: f64,
    pub norm: f64,
    pub arm: Vec<f64>,
    pub reward: f64,
}

/// Drives a SAVE policy on random arm sets and noisy linear rewards.
pub fn save_trace(policy: &mut SavePolicy, rounds: usize, seed: u64) -> Vec<SaveStep> {
    let d = policy.layer(1).fit.dim();
    let mut rng = seeded(seed);
    let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut out = Vec::with_capacity(rounds);
    for k in 1..=rounds {
        let arms = random_arm_set(&mut rng, 4, d);
        let i = policy.choose(&arms).unwrap();
        let mean: f64 = arms[i].iter().zip(&theta).map(|(a, t)| a * t).sum();
        let reward = mean + rng.random_range(-0.5..0.5);
        policy
            .observe(Feedback {
                arm_index: i,
                arm: &arms[i],
                reward,
                sigma: None,
            })
            .unwrap();
        let c = policy.last_commit();
        out.push(SaveStep {
            round: k,
            layer: c.map(|c| c.layer),
            weight: c.map_or(0.0, |c| c.weight),
            norm: c.map_or(0.0, |c| c.norm),
            arm: arms[i].clone(),
            reward,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayErrors {
    pub cov: f64,
    pub estimate: f64,
    pub var_rel: f64,
    pub weight_identity: f64,
    pub layers_checked: usize,
}

/// Rebuilds every layer of `policy` from the committed steps of the current
/// window and reports the worst discrepancies.
pub fn replay_errors(policy: &SavePolicy, steps: &[SaveStep]) -> ReplayErrors {
    let w = policy.config().window;
    let k = steps.len();
    let window_start = (k / w) * w;
    let d = policy.layer(1).fit.dim();
    let mut e = ReplayErrors::default();
    for s in steps {
        if let Some(layer) = s.layer {
            let id = (s.weight * s.norm - 2f64.powi(-(layer as i32))).abs();
            e.weight_identity = e.weight_identity.max(id);
        }
    }
    for level in 1..=policy.num_layers() {
        let xs: Vec<(Vec<f64>, f64, f64)> = steps
            .iter()
            .filter(|s| s.round >= window_start.max(1) && s.layer == Some(level))
            .map(|s| (s.arm.clone(), s.reward, s.weight * s.weight))
            .collect();
        let layer = policy.layer(level);
        assert_eq!(layer.count, xs.len(), "layer {level} count");
        let reg = 2f64.powi(-2 * level as i32);
        let (cov, theta) = ridge(d, reg, &xs);
        e.cov = e
            .cov
            .max(max_abs_diff(layer.fit.cov().as_slice(), cov.as_slice()));
        e.estimate = e
            .estimate
            .max(max_abs_diff(layer.fit.estimate(), theta.as_slice()));
        if !xs.is_empty() {
            let est = layer.fit.estimate();
            let brute: f64 = xs
                .iter()
                .map(|(a, r, w2)| {
                    let pred: f64 = a.iter().zip(est).map(|(x, t)| x * t).sum();
                    w2 * (r - pred).powi(2)
                })
                .sum();
            let ours = layer.fit.weighted_residual_sum(layer.sum_wr2, est);
            e.var_rel = e
                .var_rel
                .max((ours - brute).abs() / brute.abs().max(1e-300));
            e.layers_checked += 1;
        }
    }
    e
}
