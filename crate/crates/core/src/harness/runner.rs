//! Runs every `(setting, policy, horizon, trial)` cell, then writes one CSV
//! per setting and a `summary.json`.
//!
//! Cells are independent: each owns its environment and policy, and every
//! random stream is derived from `(base_seed, purpose, trial)`. Results are
//! merged in cell order, so parallel and serial runs write identical files.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PolicyConfig, PolicyKind, Setting, Tunable};
use super::params::{select_save_params, select_woful_params};
use super::HarnessError;
use crate::baselines::{Exp3S, SwUcb, UniformRandom};
use crate::bob::{BobConfig, BobPolicy};
use crate::env::{derive_rng, EnvAccounting, Environment, EnvironmentSpec};
use crate::policy::{Feedback, Policy, SaveConfig, SavePolicy, WofulConfig, WofulPolicy};

pub const CSV_HEADER: [&str; 7] = [
    "k",
    "policy",
    "trial",
    "chosen_index",
    "reward",
    "inst_regret",
    "cum_regret",
];

const POLICY_PURPOSE: u64 = 0x706f_6c69_6379;

/// One CSV line. Failure rows carry `chosen_index = -1` and NaN reward and
/// regret, with `k` the round that failed and `cum_regret` the total so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub policy: String,
    pub trial: u64,
    pub chosen_index: i64,
    pub reward: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub setting: String,
    pub policy: String,
    pub horizon: usize,
    pub trial: u64,
    pub round: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub rows: Vec<TraceRow>,
    pub final_regret: Option<f64>,
    pub failure: Option<(usize, String)>,
    pub accounting: EnvAccounting,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub horizon: usize,
    pub completed: usize,
    pub mean_final_regret: Option<f64>,
    /// Sample standard deviation over trials divided by `sqrt(trials)`.
    pub std_error: Option<f64>,
    pub final_regrets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonAccounting {
    pub horizon: usize,
    pub nominal_budget: f64,
    pub realized_budget: f64,
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingSummary {
    pub setting: String,
    pub csv: String,
    pub environment: Vec<HorizonAccounting>,
    pub results: Vec<PolicySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub base_seed: u64,
    pub trials: usize,
    pub stride: usize,
    pub settings: Vec<SettingSummary>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: true }
    }
}

fn total_variance(spec: &EnvironmentSpec) -> Result<f64, HarnessError> {
    let mut v = 0.0;
    for k in 1..=spec.horizon {
        let s = spec.sigma_at(k)?;
        v += s * s;
    }
    Ok(v)
}

fn resolve<T: Copy>(
    given: Tunable<T>,
    auto: impl FnOnce() -> Result<T, HarnessError>,
) -> Result<T, HarnessError> {
    match given.value() {
        Some(v) => Ok(v),
        None => auto(),
    }
}

/// Builds policy `index` of the config for one cell.
pub(crate) fn build_policy(
    pc: &PolicyConfig,
    index: usize,
    spec: &EnvironmentSpec,
    base_seed: u64,
    trial: u64,
) -> Result<Box<dyn Policy>, HarnessError> {
    let d = spec.dim();
    let horizon = spec.horizon;
    let rng = || {
        let purpose = POLICY_PURPOSE ^ ((index as u64) << 48) ^ horizon as u64;
        derive_rng(base_seed, purpose, trial)
    };
    let label = pc.label().to_string();
    let auto_inputs =
        || -> Result<(f64, f64), HarnessError> { Ok((spec.nominal_budget, total_variance(spec)?)) };
    Ok(match &pc.kind {
        PolicyKind::Woful {
            lambda,
            alpha,
            gamma,
            window,
            theta_bound,
            arm_bound,
            delta,
            radius,
        } => {
            let choice = || -> Result<_, HarnessError> {
                let (b, v) = auto_inputs()?;
                select_woful_params(d, horizon, b, v)
            };
            let window = resolve(*window, || Ok(choice()?.window))?;
            let alpha = resolve(*alpha, || Ok(choice()?.alpha))?;
            let cfg = WofulConfig {
                lambda: *lambda,
                alpha,
                gamma: *gamma,
                window,
                theta_bound: *theta_bound,
                arm_bound: *arm_bound,
                noise_bound: spec.noise_bound,
                delta: *delta,
                radius: *radius,
            };
            Box::new(WofulPolicy::new(d, cfg)?.with_name(label))
        }
        PolicyKind::Save {
            window,
            alpha,
            layers,
            theta_bound,
            delta,
            radius,
        } => {
            let choice = || -> Result<_, HarnessError> {
                let (b, v) = auto_inputs()?;
                select_save_params(d, horizon, b, v)
            };
            let window = resolve(*window, || Ok(choice()?.window))?;
            let alpha = resolve(*alpha, || Ok(choice()?.alpha))?;
            let cfg = SaveConfig {
                window,
                alpha,
                layers: *layers,
                theta_bound: *theta_bound,
                noise_bound: spec.noise_bound,
                delta: *delta,
                radius: *radius,
            };
            Box::new(SavePolicy::new(d, cfg)?.with_name(label))
        }
        PolicyKind::SaveBob {
            theta_bound,
            delta,
            radius,
        } => {
            let cfg = BobConfig {
                theta_bound: *theta_bound,
                noise_bound: spec.noise_bound,
                delta: *delta,
                radius: *radius,
            };
            Box::new(BobPolicy::new(d, horizon, cfg, Box::new(rng()))?.with_name(label))
        }
        PolicyKind::SwUcb {
            window,
            lambda,
            beta,
        } => Box::new(SwUcb::new(d, *window, *lambda, *beta)?.with_name(label)),
        PolicyKind::Exp3s {
            alpha_bar,
            gamma_bar,
        } => {
            if !spec.has_fixed_arm_set() {
                return Err(HarnessError::Config(format!(
                    "policy `{label}` needs a fixed arm set"
                )));
            }
            let alpha_bar = alpha_bar.unwrap_or(1.0 / horizon as f64);
            Box::new(Exp3S::new(alpha_bar, *gamma_bar, rng())?.with_name(label))
        }
        PolicyKind::Uniform => Box::new(UniformRandom::new(rng()).with_name(label)),
    })
}

/// Plays one configured policy against one environment realization,
/// recording every `stride`-th round and the last one.
pub fn simulate(
    spec: &EnvironmentSpec,
    pc: &PolicyConfig,
    index: usize,
    base_seed: u64,
    trial: u64,
    stride: usize,
) -> CellResult {
    simulate_with(
        spec,
        pc.label(),
        pc.kind.needs_variance(),
        trial,
        stride,
        || build_policy(pc, index, spec, base_seed, trial),
    )
}

/// As [`simulate`], with the policy supplied by `make`. Errors and panics
/// end the trial early and leave a failure row.
pub fn simulate_with(
    spec: &EnvironmentSpec,
    label: &str,
    reveal_variance: bool,
    trial: u64,
    stride: usize,
    make: impl FnOnce() -> Result<Box<dyn Policy>, HarnessError>,
) -> CellResult {
    let label = label.to_string();
    let horizon = spec.horizon;
    let stride = stride.max(1);
    let mut rows = Vec::with_capacity(horizon / stride + 1);
    let mut cum = 0.0;
    let mut k = 0;
    let mut env = None;

    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<(), HarnessError> {
        let env = env.insert(Environment::new(spec.clone(), trial)?);
        let mut policy = make()?;
        for round in 1..=horizon {
            k = round;
            let obs = env.step(round)?;
            let i = policy.choose(&obs.arm_set)?;
            if i >= obs.arm_set.len() {
                return Err(HarnessError::Config(format!(
                    "policy `{label}` chose arm {i} of {}",
                    obs.arm_set.len()
                )));
            }
            let reward = obs.reward(i);
            let inst = obs.instant_regret(i);
            cum += inst;
            policy.observe(Feedback {
                arm_index: i,
                arm: &obs.arm_set[i],
                reward,
                sigma: reveal_variance.then_some(obs.sigma),
            })?;
            if round % stride == 0 || round == horizon {
                rows.push(TraceRow {
                    k: round,
                    policy: label.clone(),
                    trial,
                    chosen_index: i as i64,
                    reward,
                    inst_regret: inst,
                    cum_regret: cum,
                });
            }
        }
        Ok(())
    }));

    let message = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(payload) => Some(
            payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "policy panicked".into()),
        ),
    };
    let accounting = env.map(|e| e.accounting()).unwrap_or_default();
    match message {
        None => CellResult {
            rows,
            final_regret: Some(cum),
            failure: None,
            accounting,
        },
        Some(msg) => {
            rows.push(TraceRow {
                k,
                policy: label,
                trial,
                chosen_index: -1,
                reward: f64::NAN,
                inst_regret: f64::NAN,
                cum_regret: cum,
            });
            CellResult {
                rows,
                final_regret: None,
                failure: Some((k, msg)),
                accounting,
            }
        }
    }
}

/// Builds every environment and policy once without running anything.
pub fn validate_experiment(cfg: &ExperimentConfig) -> Result<Vec<Setting>, HarnessError> {
    cfg.check()?;
    let settings = cfg.settings()?;
    for s in &settings {
        for &h in &cfg.horizons {
            let spec = s.spec(h, cfg.base_seed)?;
            for (i, p) in cfg.policies.iter().enumerate() {
                build_policy(p, i, &spec, cfg.base_seed, 0)?;
            }
        }
    }
    Ok(settings)
}

fn mean_and_se(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

fn write_csv(path: &Path, rows: impl Iterator<Item = TraceRow>) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the whole grid and writes `<output>/<setting>.csv` and
/// `<output>/summary.json`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: RunOptions,
) -> Result<RunSummary, HarnessError> {
    let settings = validate_experiment(cfg)?;
    let mut specs = Vec::with_capacity(settings.len());
    for s in &settings {
        specs.push(
            cfg.horizons
                .iter()
                .map(|&h| s.spec(h, cfg.base_seed))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let mut cells = Vec::new();
    for si in 0..settings.len() {
        for pi in 0..cfg.policies.len() {
            for hi in 0..cfg.horizons.len() {
                for t in 0..cfg.trials as u64 {
                    cells.push((si, pi, hi, t));
                }
            }
        }
    }
    info!(
        "running {} cells ({} settings, {} policies, {} horizons, {} trials)",
        cells.len(),
        settings.len(),
        cfg.policies.len(),
        cfg.horizons.len(),
        cfg.trials
    );
    let run = |&(si, pi, hi, t): &(usize, usize, usize, u64)| {
        debug!(
            "cell {} / {} / K={} / trial {t}",
            settings[si].name,
            cfg.policies[pi].label(),
            cfg.horizons[hi]
        );
        simulate(
            &specs[si][hi],
            &cfg.policies[pi],
            pi,
            cfg.base_seed,
            t,
            cfg.stride,
        )
    };
    let results: Vec<CellResult> = if opts.parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };

    fs::create_dir_all(&cfg.output).map_err(|source| HarnessError::Io {
        path: cfg.output.clone(),
        source,
    })?;

    let mut failures = Vec::new();
    let mut summaries = Vec::new();
    let per_setting = cfg.policies.len() * cfg.horizons.len() * cfg.trials;
    for (si, setting) in settings.iter().enumerate() {
        let block = &results[si * per_setting..(si + 1) * per_setting];
        let block_cells = &cells[si * per_setting..(si + 1) * per_setting];
        let file = format!("{}.csv", setting.name);
        let path: PathBuf = cfg.output.join(&file);
        write_csv(&path, block.iter().flat_map(|r| r.rows.iter().cloned()))?;
        info!("wrote {}", path.display());

        let mut results_out = Vec::new();
        for (pi, pc) in cfg.policies.iter().enumerate() {
            for (hi, &h) in cfg.horizons.iter().enumerate() {
                let start = (pi * cfg.horizons.len() + hi) * cfg.trials;
                let finals: Vec<f64> = block[start..start + cfg.trials]
                    .iter()
                    .filter_map(|r| r.final_regret)
                    .collect();
                let (mean, se) = mean_and_se(&finals);
                results_out.push(PolicySummary {
                    policy: pc.label().to_string(),
                    horizon: h,
                    completed: finals.len(),
                    mean_final_regret: mean,
                    std_error: se,
                    final_regrets: finals,
                });
            }
        }
        for (r, &(_, pi, hi, t)) in block.iter().zip(block_cells) {
            if let Some((round, msg)) = &r.failure {
                warn!(
                    "{} / {} / K={} / trial {t} failed at round {round}: {msg}",
                    setting.name,
                    cfg.policies[pi].label(),
                    cfg.horizons[hi]
                );
                failures.push(Failure {
                    setting: setting.name.clone(),
                    policy: cfg.policies[pi].label().to_string(),
                    horizon: cfg.horizons[hi],
                    trial: t,
                    round: *round,
                    message: msg.clone(),
                });
            }
        }
        let environment = specs[si]
            .iter()
            .enumerate()
            .map(|(hi, spec)| {
                // Every trial and policy sees the same drift and variance.
                let acc = block[hi * cfg.trials].accounting;
                Ok(HorizonAccounting {
                    horizon: spec.horizon,
                    nominal_budget: spec.nominal_budget,
                    realized_budget: acc.realized_budget,
                    total_variance: total_variance(spec)?,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        summaries.push(SettingSummary {
            setting: setting.name.clone(),
            csv: file,
            environment,
            results: results_out,
        });
    }

    let summary = RunSummary {
        base_seed: cfg.base_seed,
        trials: cfg.trials,
        stride: cfg.stride,
        settings: summaries,
        failures,
    };
    let path = cfg.output.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|source| HarnessError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text + "\n").map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    info!("wrote {}", path.display());
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_values() {
        assert_eq!(mean_and_se(&[]), (None, None));
        assert_eq!(mean_and_se(&[3.0]), (Some(3.0), Some(0.0)));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        let expected = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((se.unwrap() - expected).abs() < 1e-15);
    }
}
