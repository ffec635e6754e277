mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use common::{random_arm_set, seeded};
use rand::Rng;
use varband::env::{instant_regret, EnvironmentSpec, NoiseModel};
use varband::harness::{
    run_experiment, simulate_with, EnvironmentConfig, ExperimentConfig, PolicyConfig, PolicyKind,
    RunOptions, TraceRow, CSV_HEADER,
};
use varband::policy::{Feedback, Policy, PolicyError};

fn fixed_config(
    out: &Path,
    trials: usize,
    horizons: Vec<usize>,
    stride: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        environment: EnvironmentConfig::FixedTheta {
            theta: vec![0.7, 0.3],
            noise: NoiseModel::DecayingBernoulli,
        },
        policies: vec![
            PolicyConfig::new(PolicyKind::Uniform),
            PolicyConfig::new(PolicyKind::SwUcb {
                window: 50,
                lambda: 1.0,
                beta: 1.0,
            }),
            PolicyConfig::new(PolicyKind::Exp3s {
                alpha_bar: None,
                gamma_bar: 0.05,
            }),
        ],
        horizons,
        trials,
        base_seed: 99,
        output: out.to_path_buf(),
        stride,
    }
}

fn read_rows(path: &Path) -> Vec<TraceRow> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_HEADER);
    r.deserialize().map(|x| x.unwrap()).collect()
}

#[test]
fn instant_regret_matches_brute_force() {
    assert!(
        (instant_regret(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.7, 0.3], 1) - 0.4).abs() < 1e-15
    );
    assert_eq!(
        instant_regret(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.7, 0.3], 0),
        0.0
    );
    let mut rng = seeded(4);
    for _ in 0..500 {
        let arms = random_arm_set(&mut rng, 5, 3);
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vals: Vec<f64> = arms
            .iter()
            .map(|a| a.iter().zip(&theta).map(|(x, t)| x * t).sum())
            .collect();
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, v) in vals.iter().enumerate() {
            let r = instant_regret(&arms, &theta, i);
            assert!(r >= 0.0);
            assert!((r - (best - v)).abs() < 1e-12);
        }
    }
}

#[test]
fn uniform_policy_regret_near_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixed_config(dir.path(), 1, vec![10], 1);
    cfg.policies.truncate(1);
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let mean = summary.settings[0].results[0].mean_final_regret.unwrap() / 10.0;
    // Each round costs 0.4 with probability 1/2: sd of the mean is 0.4 * sqrt(0.25/10).
    let sd = 0.4 * (0.25f64 / 10.0).sqrt();
    assert!((mean - 0.2).abs() <= 3.0 * sd, "mean {mean}");

    cfg.trials = 400;
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let mean = summary.settings[0].results[0].mean_final_regret.unwrap() / 10.0;
    let sd = 0.4 * (0.25f64 / 4000.0).sqrt();
    assert!((mean - 0.2).abs() <= 3.0 * sd, "mean {mean}");
}

#[test]
fn identical_runs_write_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(
        &fixed_config(a.path(), 3, vec![200, 500], 7),
        RunOptions::default(),
    )
    .unwrap();
    run_experiment(
        &fixed_config(b.path(), 3, vec![200, 500], 7),
        RunOptions::default(),
    )
    .unwrap();
    for name in ["fixed_theta.csv", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_experiment(
        &fixed_config(a.path(), 4, vec![300], 1),
        RunOptions { parallel: true },
    )
    .unwrap();
    let sb = run_experiment(
        &fixed_config(b.path(), 4, vec![300], 1),
        RunOptions { parallel: false },
    )
    .unwrap();
    assert_eq!(sa, sb);
    assert_eq!(
        fs::read(a.path().join("fixed_theta.csv")).unwrap(),
        fs::read(b.path().join("fixed_theta.csv")).unwrap()
    );
}

#[test]
fn trace_is_sorted_and_accumulates_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixed_config(dir.path(), 2, vec![40, 90], 1);
    run_experiment(&cfg, RunOptions::default()).unwrap();
    let rows = read_rows(&dir.path().join("fixed_theta.csv"));
    assert_eq!(rows.len(), 3 * 2 * (40 + 90));
    let mut cum = 0.0;
    let mut prev: Option<&TraceRow> = None;
    for r in &rows {
        if r.k == 1 {
            cum = 0.0;
        } else {
            let p = prev.unwrap();
            assert_eq!((p.k + 1, &p.policy, p.trial), (r.k, &r.policy, r.trial));
        }
        cum += r.inst_regret;
        assert_eq!(r.cum_regret, cum);
        assert!(r.inst_regret >= 0.0);
        prev = Some(r);
    }
    let order: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    let mut dedup = order.clone();
    dedup.dedup();
    assert_eq!(dedup, vec!["uniform", "sw-ucb", "modified-exp3s"]);
}

#[test]
fn summary_matches_recomputation_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixed_config(dir.path(), 5, vec![100, 250], 30);
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    let rows = read_rows(&dir.path().join("fixed_theta.csv"));

    // A run ends where k stops increasing.
    let mut finals: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let last = rows.get(i + 1).is_none_or(|n| n.k <= r.k);
        if last {
            finals
                .entry((r.policy.clone(), r.k))
                .or_default()
                .push(r.cum_regret);
        }
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let results = json["settings"][0]["results"].as_array().unwrap();
    assert_eq!(results.len(), 3 * 2);
    for res in results {
        let key = (
            res["policy"].as_str().unwrap().to_string(),
            res["horizon"].as_u64().unwrap() as usize,
        );
        let xs = &finals[&key];
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((res["mean_final_regret"].as_f64().unwrap() - mean).abs() <= 1e-9);
        assert!((res["std_error"].as_f64().unwrap() - sd / n.sqrt()).abs() <= 1e-9);
    }
    assert!(summary.failures.is_empty());
}

struct Faulty {
    fail_at: usize,
    round: usize,
}

impl Policy for Faulty {
    fn name(&self) -> &str {
        "faulty"
    }

    fn choose(&mut self, _: &[Vec<f64>]) -> Result<usize, PolicyError> {
        self.round += 1;
        if self.round == self.fail_at {
            panic!("scripted failure");
        }
        Ok(1)
    }

    fn observe(&mut self, _: Feedback<'_>) -> Result<(), PolicyError> {
        Ok(())
    }
}

#[test]
fn panicking_policy_leaves_failure_row() {
    let spec = EnvironmentSpec::fixed(vec![0.7, 0.3], 50, NoiseModel::None, 0);
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let res = simulate_with(&spec, "faulty", false, 3, 1, || {
        Ok(Box::new(Faulty {
            fail_at: 20,
            round: 0,
        }))
    });
    std::panic::set_hook(hook);
    let (round, msg) = res.failure.clone().unwrap();
    assert_eq!(round, 20);
    assert!(msg.contains("scripted failure"));
    assert_eq!(res.final_regret, None);
    assert_eq!(res.rows.len(), 20);
    let last = res.rows.last().unwrap();
    assert_eq!(last.chosen_index, -1);
    assert!(last.reward.is_nan());
    assert!((last.cum_regret - 19.0 * 0.4).abs() < 1e-12);
}

#[test]
fn schedule_environment_runs_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("# two rounds per theta\nhorizon=60 dim=2 noise_bound=0.5\n");
    for k in 0..60 {
        let t = if k < 30 { "0.9 0.1" } else { "0.1 0.9" };
        let third = if k % 2 == 0 { " | 0.5 0.5" } else { "" };
        text.push_str(&format!("{t} ; 0.2 ; 1 0 | 0 1{third}\n"));
    }
    fs::write(dir.path().join("sched.txt"), text).unwrap();
    let cfg_text = r#"
horizons = [40, 60]
trials = 2
output = "out"

[environment]
kind = "schedule"
path = "sched.txt"

[[policies]]
kind = "save"
window = 20

[[policies]]
kind = "woful"
window = 20
"#;
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, cfg_text).unwrap();
    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.output = dir.path().join("out");
    let summary = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    let env = &summary.settings[0].environment;
    for e in env {
        assert!((e.nominal_budget - (2.0f64 * 0.64).sqrt()).abs() < 1e-12);
        assert_eq!(e.realized_budget, e.nominal_budget);
    }
    assert!((env[1].total_variance - 60.0 * 0.04).abs() < 1e-12);

    // Varying arm sets rule out EXP3.S.
    cfg.policies.push(PolicyConfig::new(PolicyKind::Exp3s {
        alpha_bar: None,
        gamma_bar: 0.1,
    }));
    assert!(run_experiment(&cfg, RunOptions::default()).is_err());
}

#[test]
fn auto_parameters_need_positive_budget() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixed_config(dir.path(), 1, vec![100], 1);
    cfg.policies = vec![PolicyConfig::new(PolicyKind::Save {
        window: varband::harness::Tunable::Auto(varband::harness::AutoTag::Auto),
        alpha: varband::harness::Tunable::Value(0.1),
        layers: None,
        theta_bound: 1.0,
        delta: 0.01,
        radius: varband::policy::SaveRadiusMode::Theoretical,
    })];
    let err = run_experiment(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.to_string().contains("B_K"), "{err}");
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varband"))
}

#[test]
fn cli_params_and_validation() {
    let out = cli()
        .args([
            "params", "woful", "--d", "1", "--K", "1000000", "--B", "1", "--V", "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["window"], 100);
    assert!((v["alpha"].as_f64().unwrap() - 0.1).abs() < 1e-12);

    let out = cli()
        .args([
            "params", "save", "--d", "1", "--K", "10", "--B", "0", "--V", "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "horizons = [5, 3]\noutput = \"o\"\npolicies = [{ kind = \"uniform\" }]\n[environment]\nkind = \"fixed_theta\"\ntheta = [1.0]\n").unwrap();
    let out = cli().arg("validate").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("increasing"));

    let good = dir.path().join("good.toml");
    fs::write(&good, "horizons = [50]\noutput = \"o\"\npolicies = [{ kind = \"uniform\" }]\n[environment]\nkind = \"fixed_theta\"\ntheta = [1.0, 0.0]\n").unwrap();
    let out = cli().arg("validate").arg(&good).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out_dir = dir.path().join("run");
    let out = cli()
        .arg("run")
        .arg(&good)
        .args(["--trials", "2", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("fixed_theta.csv").exists());
    assert!(out_dir.join("summary.json").exists());

    let out = cli()
        .arg("validate")
        .arg(dir.path().join("missing.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));
}
