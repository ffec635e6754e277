//! Non-stationary linear bandit environments.
//!
//! An [`EnvironmentSpec`] is an immutable description; an [`Environment`] is
//! one trial's realization of it. Noise draws are keyed by `(seed, trial, k)`
//! so two trials never share a stream and any round can be regenerated.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("round {k} outside 1..={horizon}")]
    RoundOutOfRange { k: usize, horizon: usize },
    #[error("rounds must be stepped in order: expected {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Schedule {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Zero-mean, bounded noise laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `Bernoulli(0.5/k) - 0.5/k`, variance `(1 - 0.5/k) * 0.5/k`.
    DecayingBernoulli,
    /// `+sigma` or `-sigma` with equal probability, variance `sigma^2`.
    Rademacher { sigma: f64 },
    /// Noiseless rewards.
    None,
}

impl NoiseModel {
    fn variance(&self, k: usize) -> f64 {
        match self {
            NoiseModel::DecayingBernoulli => {
                let p = 0.5 / k as f64;
                (1.0 - p) * p
            }
            NoiseModel::Rademacher { sigma } => sigma * sigma,
            NoiseModel::None => 0.0,
        }
    }

    /// Maps a uniform draw `u` in `[0, 1)` to a noise value.
    fn draw(&self, k: usize, u: f64) -> f64 {
        match self {
            NoiseModel::DecayingBernoulli => {
                let p = 0.5 / k as f64;
                if u < p {
                    1.0 - p
                } else {
                    -p
                }
            }
            NoiseModel::Rademacher { sigma } => {
                if u < 0.5 {
                    *sigma
                } else {
                    -*sigma
                }
            }
            NoiseModel::None => 0.0,
        }
    }

    /// Largest possible `|noise|` at any round.
    fn support_bound(&self) -> f64 {
        match self {
            // The upper value 1 - 0.5/k tends to 1.
            NoiseModel::DecayingBernoulli => 1.0,
            NoiseModel::Rademacher { sigma } => sigma.abs(),
            NoiseModel::None => 0.0,
        }
    }
}

/// One row of a user-supplied schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub arms: Vec<Vec<f64>>,
}

/// A per-round table of `(theta_k, sigma_k, D_k)`. Noise at round `k` is
/// `+sigma_k` or `-sigma_k` with equal probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub dim: usize,
    pub noise_bound: f64,
    pub rows: Vec<ScheduleRow>,
}

impl Schedule {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the schedule text format:
    ///
    /// ```text
    /// # comments and blank lines are ignored
    /// horizon=3 dim=2 noise_bound=1.0
    /// 0.7 0.3 ; 0.1 ; 1 0 | 0 1
    /// ```
    ///
    /// followed by exactly `horizon` round lines of
    /// `theta ; sigma ; arm | arm | ...`.
    pub fn parse(text: &str, origin: &str) -> Result<Self, EnvError> {
        let err = |line: usize, msg: String| EnvError::Schedule {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hline, header) = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let (mut horizon, mut dim, mut noise_bound) = (None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| err(hline, format!("expected key=value, got `{field}`")))?;
            match key {
                "horizon" => horizon = value.parse::<usize>().ok(),
                "dim" => dim = value.parse::<usize>().ok(),
                "noise_bound" => noise_bound = value.parse::<f64>().ok(),
                other => return Err(err(hline, format!("unknown header key `{other}`"))),
            }
        }
        let horizon = horizon.ok_or_else(|| err(hline, "header needs a valid horizon".into()))?;
        let dim = dim
            .filter(|d| *d > 0)
            .ok_or_else(|| err(hline, "header needs a positive dim".into()))?;
        let noise_bound = noise_bound
            .filter(|r| *r > 0.0)
            .ok_or_else(|| err(hline, "header needs a positive noise_bound".into()))?;

        let parse_vec = |line: usize, s: &str, what: &str| -> Result<Vec<f64>, EnvError> {
            let v = s
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(line, format!("bad number in {what}: {e}")))?;
            if v.len() != dim {
                return Err(err(
                    line,
                    format!("{what} has {} entries, expected {dim}", v.len()),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(err(line, format!("{what} is not finite")));
            }
            Ok(v)
        };

        let mut rows = Vec::with_capacity(horizon);
        for (line, body) in lines {
            let parts: Vec<&str> = body.split(';').collect();
            if parts.len() != 3 {
                return Err(err(line, "expected `theta ; sigma ; arms`".into()));
            }
            let theta = parse_vec(line, parts[0], "theta")?;
            let sigma: f64 = parts[1]
                .trim()
                .parse()
                .map_err(|e| err(line, format!("bad sigma: {e}")))?;
            if !(0.0..=noise_bound).contains(&sigma) {
                return Err(err(
                    line,
                    format!("sigma {sigma} outside [0, {noise_bound}]"),
                ));
            }
            let arms = parts[2]
                .split('|')
                .map(|a| parse_vec(line, a, "arm"))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(ScheduleRow { theta, sigma, arms });
        }
        if rows.len() != horizon {
            return Err(err(
                hline,
                format!("header declares {horizon} rounds, found {}", rows.len()),
            ));
        }
        Ok(Self {
            dim,
            noise_bound,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    /// Two orthogonal unit arms with `theta_k` drifting on a sinusoid whose
    /// frequency scales with the nominal budget.
    SinusoidalTwoArm,
    FixedTheta {
        theta: Vec<f64>,
        arms: Vec<Vec<f64>>,
    },
    CustomSchedule(Schedule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    pub horizon: usize,
    pub nominal_budget: f64,
    pub noise_bound: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn sinusoidal(horizon: usize, budget: f64, seed: u64) -> Self {
        Self {
            kind: EnvKind::SinusoidalTwoArm,
            horizon,
            nominal_budget: budget,
            noise_bound: 1.0,
            noise: NoiseModel::DecayingBernoulli,
            seed,
        }
    }

    /// Fixed `theta` with the standard basis as the arm set.
    pub fn fixed(theta: Vec<f64>, horizon: usize, noise: NoiseModel, seed: u64) -> Self {
        let d = theta.len();
        let arms = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            kind: EnvKind::FixedTheta { theta, arms },
            horizon,
            nominal_budget: 0.0,
            noise_bound: 1.0,
            noise,
            seed,
        }
    }

    pub fn from_schedule(schedule: Schedule, seed: u64) -> Self {
        let horizon = schedule.rows.len();
        let noise_bound = schedule.noise_bound;
        let budget = schedule
            .rows
            .windows(2)
            .map(|w| l2_distance(&w[0].theta, &w[1].theta))
            .sum();
        Self {
            kind: EnvKind::CustomSchedule(schedule),
            horizon,
            nominal_budget: budget,
            noise_bound,
            noise: NoiseModel::None,
            seed,
        }
    }

    /// The same environment over `horizon` rounds. Schedules are truncated
    /// and their budget recomputed; longer-than-scheduled horizons fail.
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self, EnvError> {
        if let EnvKind::CustomSchedule(s) = &mut self.kind {
            if horizon > s.rows.len() {
                return Err(EnvError::Invalid(format!(
                    "horizon {horizon} exceeds the {} scheduled rounds",
                    s.rows.len()
                )));
            }
            s.rows.truncate(horizon);
            self.nominal_budget = s
                .rows
                .windows(2)
                .map(|w| l2_distance(&w[0].theta, &w[1].theta))
                .sum();
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            EnvKind::SinusoidalTwoArm => 2,
            EnvKind::FixedTheta { theta, .. } => theta.len(),
            EnvKind::CustomSchedule(s) => s.dim,
        }
    }

    /// Whether every round offers the same arm set.
    pub fn has_fixed_arm_set(&self) -> bool {
        match &self.kind {
            EnvKind::SinusoidalTwoArm | EnvKind::FixedTheta { .. } => true,
            EnvKind::CustomSchedule(s) => s.rows.windows(2).all(|w| w[0].arms == w[1].arms),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Invalid(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.nominal_budget >= 0.0 && self.nominal_budget.is_finite()) {
            return bad(format!(
                "nominal budget {} must be >= 0",
                self.nominal_budget
            ));
        }
        if !(self.noise_bound > 0.0 && self.noise_bound.is_finite()) {
            return bad(format!("noise bound {} must be > 0", self.noise_bound));
        }
        if self.noise.support_bound() > self.noise_bound {
            return bad(format!(
                "noise support {} exceeds the noise bound {}",
                self.noise.support_bound(),
                self.noise_bound
            ));
        }
        match &self.kind {
            EnvKind::SinusoidalTwoArm => {}
            EnvKind::FixedTheta { theta, arms } => {
                if theta.is_empty() {
                    return bad("theta must be non-empty".into());
                }
                if arms.is_empty() || arms.iter().any(|a| a.len() != theta.len()) {
                    return bad("arm set must be non-empty with arms of dimension d".into());
                }
            }
            EnvKind::CustomSchedule(s) => {
                if s.rows.len() < self.horizon {
                    return bad(format!(
                        "horizon {} exceeds the {} scheduled rounds",
                        self.horizon,
                        s.rows.len()
                    ));
                }
                if s.rows.iter().any(|r| r.arms.is_empty()) {
                    return bad("every scheduled round needs at least one arm".into());
                }
            }
        }
        Ok(())
    }

    fn check_round(&self, k: usize) -> Result<(), EnvError> {
        if k == 0 || k > self.horizon {
            return Err(EnvError::RoundOutOfRange {
                k,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    pub fn theta_at(&self, k: usize) -> Result<Vec<f64>, EnvError> {
        self.check_round(k)?;
        Ok(match &self.kind {
            EnvKind::SinusoidalTwoArm => {
                let phase = 5.0 * self.nominal_budget * PI * k as f64 / self.horizon as f64;
                vec![0.5 + 0.3 * phase.sin(), 0.5 + 0.3 * (PI + phase).sin()]
            }
            EnvKind::FixedTheta { theta, .. } => theta.clone(),
            EnvKind::CustomSchedule(s) => s.rows[k - 1].theta.clone(),
        })
    }

    pub fn sigma_at(&self, k: usize) -> Result<f64, EnvError> {
        self.check_round(k)?;
        Ok(match &self.kind {
            EnvKind::CustomSchedule(s) => s.rows[k - 1].sigma,
            _ => self.noise.variance(k).sqrt(),
        })
    }

    pub fn arm_set_at(&self, k: usize) -> Result<Vec<Vec<f64>>, EnvError> {
        self.check_round(k)?;
        Ok(match &self.kind {
            EnvKind::SinusoidalTwoArm => vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            EnvKind::FixedTheta { arms, .. } => arms.clone(),
            EnvKind::CustomSchedule(s) => s.rows[k - 1].arms.clone(),
        })
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Derives an independent ChaCha stream for `(seed, purpose, trial)`.
pub fn derive_rng(seed: u64, purpose: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(trial);
    rng
}

const NOISE_PURPOSE: u64 = 0x6e6f697365;

/// Running totals of the realized drift and noise variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnvAccounting {
    pub realized_budget: f64,
    pub realized_variance: f64,
    pub rounds: usize,
}

/// Everything the environment produces for a single round. Only `arm_set`
/// (and `sigma` in known-variance runs) may be shown to a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundObservation {
    pub k: usize,
    pub arm_set: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub sigma: f64,
    pub noise: f64,
}

impl RoundObservation {
    pub fn expected_reward(&self, arm: usize) -> f64 {
        dot(&self.theta, &self.arm_set[arm])
    }

    pub fn reward(&self, arm: usize) -> f64 {
        self.expected_reward(arm) + self.noise
    }

    pub fn instant_regret(&self, arm: usize) -> f64 {
        instant_regret(&self.arm_set, &self.theta, arm)
    }
}

/// Gap between the best arm's expected reward and the chosen one's.
pub fn instant_regret(arm_set: &[Vec<f64>], theta: &[f64], chosen: usize) -> f64 {
    let best = arm_set
        .iter()
        .map(|a| dot(a, theta))
        .fold(f64::NEG_INFINITY, f64::max);
    (best - dot(&arm_set[chosen], theta)).max(0.0)
}

/// One trial's realization of an environment.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvironmentSpec,
    trial: u64,
    rng: ChaCha8Rng,
    accounting: EnvAccounting,
    last_theta: Option<Vec<f64>>,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, trial: u64) -> Result<Self, EnvError> {
        spec.validate()?;
        let rng = derive_rng(spec.seed, NOISE_PURPOSE, trial);
        Ok(Self {
            spec,
            trial,
            rng,
            accounting: EnvAccounting::default(),
            last_theta: None,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    /// Noise at round `k`, a pure function of `(seed, trial, k)`.
    pub fn sample_noise(&mut self, k: usize) -> Result<f64, EnvError> {
        self.spec.check_round(k)?;
        self.rng.set_word_pos(2 * k as u128);
        let u: f64 = self.rng.random();
        Ok(match &self.spec.kind {
            EnvKind::CustomSchedule(s) => NoiseModel::Rademacher {
                sigma: s.rows[k - 1].sigma,
            }
            .draw(k, u),
            _ => self.spec.noise.draw(k, u),
        })
    }

    /// Produces round `k`. Rounds must be requested as 1, 2, 3, ...
    pub fn step(&mut self, k: usize) -> Result<RoundObservation, EnvError> {
        self.spec.check_round(k)?;
        let expected = self.accounting.rounds + 1;
        if k != expected {
            return Err(EnvError::OutOfOrder { expected, got: k });
        }
        let theta = self.spec.theta_at(k)?;
        let sigma = self.spec.sigma_at(k)?;
        let arm_set = self.spec.arm_set_at(k)?;
        let noise = self.sample_noise(k)?;

        if let Some(prev) = &self.last_theta {
            self.accounting.realized_budget += l2_distance(prev, &theta);
        }
        self.accounting.realized_variance += sigma * sigma;
        self.accounting.rounds = k;
        self.last_theta = Some(theta.clone());

        Ok(RoundObservation {
            k,
            arm_set,
            theta,
            sigma,
            noise,
        })
    }

    pub fn accounting(&self) -> EnvAccounting {
        self.accounting
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sinusoid_zero_crossing() {
        let spec = EnvironmentSpec::sinusoidal(30_000, 1.0, 0);
        let theta = spec.theta_at(6_000).unwrap();
        assert_abs_diff_eq!(theta[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sinusoid_quarter_phase() {
        let spec = EnvironmentSpec::sinusoidal(30_000, 1.0, 0);
        let theta = spec.theta_at(1_500).unwrap();
        assert_abs_diff_eq!(theta[0], 0.712_132_034_355_964_3, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[1], 1.0 - 0.712_132_034_355_964_3, epsilon = 1e-12);
    }

    #[test]
    fn fixed_theta_has_no_drift() {
        let spec = EnvironmentSpec::fixed(vec![0.7, 0.3], 500, NoiseModel::DecayingBernoulli, 3);
        let mut env = Environment::new(spec, 0).unwrap();
        for k in 1..=500 {
            assert_eq!(env.step(k).unwrap().theta, vec![0.7, 0.3]);
        }
        assert_eq!(env.accounting().realized_budget, 0.0);
    }

    #[test]
    fn round_contract() {
        let spec = EnvironmentSpec::sinusoidal(10, 1.0, 0);
        let mut env = Environment::new(spec, 0).unwrap();
        assert!(matches!(env.step(0), Err(EnvError::RoundOutOfRange { .. })));
        assert!(matches!(
            env.step(2),
            Err(EnvError::OutOfOrder {
                expected: 1,
                got: 2
            })
        ));
        for k in 1..=10 {
            env.step(k).unwrap();
        }
        assert!(matches!(
            env.step(11),
            Err(EnvError::RoundOutOfRange { .. })
        ));
    }

    #[test]
    fn first_round_noise_is_symmetric_half() {
        let spec = EnvironmentSpec::sinusoidal(10, 1.0, 0);
        assert_abs_diff_eq!(spec.sigma_at(1).unwrap().powi(2), 0.25, epsilon = 1e-15);
        let mut seen = [false, false];
        for trial in 0..64 {
            let mut env = Environment::new(spec.clone(), trial).unwrap();
            let e = env.sample_noise(1).unwrap();
            assert!(e == 0.5 || e == -0.5);
            seen[(e > 0.0) as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn variance_vanishes() {
        let spec = EnvironmentSpec::sinusoidal(10_000_000, 1.0, 0);
        assert!(spec.sigma_at(10_000_000).unwrap().powi(2) < 1e-7);
    }

    #[test]
    fn noise_mean_at_k10() {
        // Var = 0.05 * 0.95; standard error over n draws = sqrt(Var / n).
        let n = 1_000_000usize;
        let spec = EnvironmentSpec::sinusoidal(10, 1.0, 17);
        let mut sum = 0.0;
        for trial in 0..n as u64 {
            let mut env = Environment::new(spec.clone(), trial).unwrap();
            sum += env.sample_noise(10).unwrap();
        }
        let mean = sum / n as f64;
        let se = (0.05 * 0.95 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn determinism_and_trial_independence() {
        let spec = EnvironmentSpec::sinusoidal(200, 10.0, 99);
        let run = |trial| {
            let mut env = Environment::new(spec.clone(), trial).unwrap();
            (1..=200).map(|k| env.step(k).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(0), run(0));
        assert_ne!(
            run(0).iter().map(|o| o.noise).collect::<Vec<_>>(),
            run(1).iter().map(|o| o.noise).collect::<Vec<_>>()
        );
    }

    #[test]
    fn noise_within_bound() {
        let spec = EnvironmentSpec::sinusoidal(5_000, 1.0, 5);
        let mut env = Environment::new(spec, 2).unwrap();
        for k in 1..=5_000 {
            let o = env.step(k).unwrap();
            assert!(o.noise.abs() < 1.0);
            assert!(o.noise.abs() <= 1.0 - 0.5 / k as f64 + 1e-15);
            assert_eq!(o.reward(0), o.theta[0] + o.noise);
        }
    }

    #[test]
    fn instant_regret_examples() {
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_abs_diff_eq!(instant_regret(&arms, &[0.7, 0.3], 1), 0.4, epsilon = 1e-15);
        assert_eq!(instant_regret(&arms, &[0.7, 0.3], 0), 0.0);
    }

    #[test]
    fn schedule_parse_and_errors() {
        let text = "# demo\nhorizon=2 dim=2 noise_bound=1\n0.7 0.3 ; 0.1 ; 1 0 | 0 1\n0.2 0.8 ; 0 ; 1 0 | 0 1 | 0.6 0.6\n";
        let s = Schedule::parse(text, "demo").unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[1].arms.len(), 3);
        let spec = EnvironmentSpec::from_schedule(s, 0);
        assert!(!spec.has_fixed_arm_set());
        assert_abs_diff_eq!(
            spec.nominal_budget,
            (0.5f64 * 0.5 * 2.0).sqrt(),
            epsilon = 1e-12
        );

        let bad = "horizon=1 dim=2 noise_bound=1\n0.7 ; 0.1 ; 1 0\n";
        let e = Schedule::parse(bad, "bad.txt").unwrap_err().to_string();
        assert!(e.starts_with("bad.txt:2:"), "{e}");
        let short = "horizon=3 dim=1 noise_bound=1\n1 ; 0 ; 1\n";
        assert!(Schedule::parse(short, "s").is_err());
        let loud = "horizon=1 dim=1 noise_bound=0.5\n1 ; 0.9 ; 1\n";
        assert!(Schedule::parse(loud, "s").is_err());
    }

    #[test]
    fn schedule_noise_uses_row_sigma() {
        let text = "horizon=2 dim=1 noise_bound=1\n1 ; 0.25 ; 1\n1 ; 0 ; 1\n";
        let spec = EnvironmentSpec::from_schedule(Schedule::parse(text, "s").unwrap(), 1);
        let mut env = Environment::new(spec, 0).unwrap();
        assert_eq!(env.step(1).unwrap().noise.abs(), 0.25);
        assert_eq!(env.step(2).unwrap().noise, 0.0);
        assert_abs_diff_eq!(env.accounting().realized_variance, 0.0625);
    }
}
