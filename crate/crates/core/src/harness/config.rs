//! TOML experiment configuration and the `fig1` preset.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::env::{EnvironmentSpec, NoiseModel, Schedule};
use crate::policy::{RadiusMode, SaveRadiusMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

/// A hyperparameter given explicitly or left to the parameter-selection
/// rules (`"auto"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tunable<T> {
    Auto(AutoTag),
    Value(T),
}

impl<T: Copy> Tunable<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Tunable::Auto(_) => None,
            Tunable::Value(v) => Some(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// `K^{1/3}`.
    CubeRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Value(f64),
    Rule(BudgetRule),
}

impl Budget {
    pub fn resolve(&self, horizon: usize) -> f64 {
        match self {
            Budget::Value(v) => *v,
            Budget::Rule(BudgetRule::CubeRoot) => (horizon as f64).cbrt(),
        }
    }

    fn label(&self) -> String {
        match self {
            Budget::Value(v) => format!("B{v}"),
            Budget::Rule(BudgetRule::CubeRoot) => "Bcube_root".into(),
        }
    }
}

fn default_noise() -> NoiseModel {
    NoiseModel::DecayingBernoulli
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    /// Two-arm sinusoidal drift; one output setting per budget.
    Sinusoidal { budgets: Vec<Budget> },
    /// Stationary `theta` with standard-basis arms.
    FixedTheta {
        theta: Vec<f64>,
        #[serde(default = "default_noise")]
        noise: NoiseModel,
    },
    /// Per-round schedule file, relative paths resolved against the config.
    Schedule { path: PathBuf },
}

/// One output file's worth of environment: a name and a way to build the
/// spec for any horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub name: String,
    pub budget: Option<Budget>,
    template: SettingTemplate,
}

#[derive(Debug, Clone, PartialEq)]
enum SettingTemplate {
    Sinusoidal(Budget),
    Fixed(Vec<f64>, NoiseModel),
    Schedule(Schedule),
}

impl Setting {
    pub fn spec(&self, horizon: usize, seed: u64) -> Result<EnvironmentSpec, HarnessError> {
        let spec = match &self.template {
            SettingTemplate::Sinusoidal(b) => {
                EnvironmentSpec::sinusoidal(horizon, b.resolve(horizon), seed)
            }
            SettingTemplate::Fixed(theta, noise) => {
                EnvironmentSpec::fixed(theta.clone(), horizon, noise.clone(), seed)
            }
            SettingTemplate::Schedule(s) => {
                EnvironmentSpec::from_schedule(s.clone(), seed).with_horizon(horizon)?
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn d_lambda() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    2.0
}
fn d_window() -> Tunable<usize> {
    Tunable::Value(1000)
}
fn d_woful_alpha() -> Tunable<f64> {
    Tunable::Value(1.0)
}
fn d_save_alpha() -> Tunable<f64> {
    Tunable::Value(1.0 / 64.0)
}
fn d_one() -> f64 {
    1.0
}
fn d_delta() -> f64 {
    0.01
}
fn d_woful_radius() -> RadiusMode {
    RadiusMode::Fixed(10.0)
}
fn d_save_radius() -> SaveRadiusMode {
    SaveRadiusMode::FixedPowers
}
fn d_bob_radius() -> SaveRadiusMode {
    SaveRadiusMode::Theoretical
}
fn d_sw_window() -> usize {
    1000
}
fn d_beta() -> f64 {
    10.0
}
fn d_gamma_bar() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    /// Known-variance restarted weighted OFUL.
    Woful {
        #[serde(default = "d_lambda")]
        lambda: f64,
        #[serde(default = "d_woful_alpha")]
        alpha: Tunable<f64>,
        #[serde(default = "d_gamma")]
        gamma: f64,
        #[serde(default = "d_window")]
        window: Tunable<usize>,
        #[serde(default = "d_one")]
        theta_bound: f64,
        #[serde(default = "d_one")]
        arm_bound: f64,
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default = "d_woful_radius")]
        radius: RadiusMode,
    },
    /// Unknown-variance restarted multi-layer policy.
    Save {
        #[serde(default = "d_window")]
        window: Tunable<usize>,
        #[serde(default = "d_save_alpha")]
        alpha: Tunable<f64>,
        #[serde(default)]
        layers: Option<usize>,
        #[serde(default = "d_one")]
        theta_bound: f64,
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default = "d_save_radius")]
        radius: SaveRadiusMode,
    },
    /// Exp3-tuned version of `save`.
    SaveBob {
        #[serde(default = "d_one")]
        theta_bound: f64,
        #[serde(default = "d_delta")]
        delta: f64,
        #[serde(default = "d_bob_radius")]
        radius: SaveRadiusMode,
    },
    SwUcb {
        #[serde(default = "d_sw_window")]
        window: usize,
        #[serde(default = "d_lambda")]
        lambda: f64,
        #[serde(default = "d_beta")]
        beta: f64,
    },
    /// `alpha_bar` defaults to `1/K`.
    Exp3s {
        #[serde(default)]
        alpha_bar: Option<f64>,
        #[serde(default = "d_gamma_bar")]
        gamma_bar: f64,
    },
    Uniform,
}

impl PolicyKind {
    fn default_label(&self) -> &'static str {
        match self {
            PolicyKind::Woful { .. } => "restarted-woful+",
            PolicyKind::Save { .. } => "restarted-save+",
            PolicyKind::SaveBob { .. } => "restarted-save+-bob",
            PolicyKind::SwUcb { .. } => "sw-ucb",
            PolicyKind::Exp3s { .. } => "modified-exp3s",
            PolicyKind::Uniform => "uniform",
        }
    }

    /// Whether the policy is shown the per-round noise level.
    pub fn needs_variance(&self) -> bool {
        matches!(self, PolicyKind::Woful { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: PolicyKind,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self { label: None, kind }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.default_label())
    }
}

fn d_trials() -> usize {
    1
}
fn d_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub policies: Vec<PolicyConfig>,
    pub horizons: Vec<usize>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub output: PathBuf,
    /// Record every `stride`-th round plus the last one.
    #[serde(default = "d_stride")]
    pub stride: usize,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        if let EnvironmentConfig::Schedule { path } = &mut cfg.environment {
            if path.is_relative() {
                if let Some(dir) = origin.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn settings(&self) -> Result<Vec<Setting>, HarnessError> {
        Ok(match &self.environment {
            EnvironmentConfig::Sinusoidal { budgets } => budgets
                .iter()
                .map(|b| Setting {
                    name: format!("sinusoidal_{}", b.label()),
                    budget: Some(*b),
                    template: SettingTemplate::Sinusoidal(*b),
                })
                .collect(),
            EnvironmentConfig::FixedTheta { theta, noise } => vec![Setting {
                name: "fixed_theta".into(),
                budget: None,
                template: SettingTemplate::Fixed(theta.clone(), noise.clone()),
            }],
            EnvironmentConfig::Schedule { path } => vec![Setting {
                name: "schedule".into(),
                budget: None,
                template: SettingTemplate::Schedule(Schedule::load(path)?),
            }],
        })
    }

    /// Structural checks; building every policy is left to the runner's
    /// dry run.
    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.horizons.is_empty() {
            return bad("horizons must be non-empty".into());
        }
        if self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be positive and strictly increasing".into());
        }
        if self.policies.is_empty() {
            return bad("at least one policy is required".into());
        }
        let mut seen = HashSet::new();
        for p in &self.policies {
            if !seen.insert(p.label()) {
                return bad(format!("duplicate policy label `{}`", p.label()));
            }
            if p.label().contains([',', '"', '\n']) {
                return bad(format!(
                    "policy label `{}` may not contain , \" or newlines",
                    p.label()
                ));
            }
        }
        if let EnvironmentConfig::Sinusoidal { budgets } = &self.environment {
            if budgets.is_empty() {
                return bad("sinusoidal environment needs at least one budget".into());
            }
            let mut names = HashSet::new();
            for b in budgets {
                if !names.insert(b.label()) {
                    return bad(format!("duplicate budget {}", b.label()));
                }
            }
        }
        Ok(())
    }
}

/// Every hyperparameter of the synthetic experiment: WOFUL+ (lambda 1, radius
/// 10, w 1000, alpha 1, gamma 2), SAVE+ (w 1000, radii `2^{-l+1}`, 6 layers),
/// SW-UCB (lambda 1, w 1000, beta 10), EXP3.S (gamma 0.01, alpha 1/K), ten
/// trials, `K = 3e4, 6e4, ...` up to `k_max`, budgets 1, 10, 20 and `K^{1/3}`.
pub fn fig1_config(k_max: usize, trials: usize, output: PathBuf) -> ExperimentConfig {
    let horizons = (1..)
        .map(|i| 30_000 * i)
        .take_while(|&k| k <= k_max)
        .collect();
    ExperimentConfig {
        environment: EnvironmentConfig::Sinusoidal {
            budgets: vec![
                Budget::Value(1.0),
                Budget::Value(10.0),
                Budget::Value(20.0),
                Budget::Rule(BudgetRule::CubeRoot),
            ],
        },
        policies: vec![
            PolicyConfig::new(PolicyKind::Woful {
                lambda: 1.0,
                alpha: Tunable::Value(1.0),
                gamma: 2.0,
                window: Tunable::Value(1000),
                theta_bound: 1.0,
                arm_bound: 1.0,
                delta: 0.01,
                radius: RadiusMode::Fixed(10.0),
            }),
            PolicyConfig::new(PolicyKind::Save {
                window: Tunable::Value(1000),
                alpha: Tunable::Value(1.0 / 64.0),
                layers: Some(6),
                theta_bound: 1.0,
                delta: 0.01,
                radius: SaveRadiusMode::FixedPowers,
            }),
            PolicyConfig::new(PolicyKind::SwUcb {
                window: 1000,
                lambda: 1.0,
                beta: 10.0,
            }),
            PolicyConfig::new(PolicyKind::Exp3s {
                alpha_bar: None,
                gamma_bar: 0.01,
            }),
        ],
        horizons,
        trials,
        base_seed: 2024,
        output,
        stride: 1000,
    }
}
