use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use varband::harness::{
    fig1_config, run_experiment, select_save_params, select_woful_params, validate_experiment,
    ExperimentConfig, RunOptions, RunSummary,
};

/// Non-stationary heteroscedastic linear bandit experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the synthetic sinusoid comparison with its fixed hyperparameters.
    Fig1 {
        /// Largest horizon; horizons are 30000, 60000, ... up to this.
        #[arg(long, default_value_t = 240_000)]
        k_max: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value = "fig1")]
        out: PathBuf,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        serial: bool,
    },
    /// Print the window and alpha chosen for the given problem size.
    Params {
        #[arg(value_enum)]
        policy: ParamPolicy,
        #[arg(long)]
        d: usize,
        #[arg(long = "K")]
        k: usize,
        #[arg(long = "B")]
        b: f64,
        #[arg(long = "V")]
        v: f64,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Run cells one at a time.
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamPolicy {
    Woful,
    Save,
}

fn report(summary: &RunSummary) {
    for s in &summary.settings {
        println!("{} ({})", s.setting, s.csv);
        for r in &s.results {
            match (r.mean_final_regret, r.std_error) {
                (Some(m), Some(se)) => println!(
                    "  {:<24} K={:<8} regret {:>12.3} ± {:<10.3} ({} trials)",
                    r.policy, r.horizon, m, se, r.completed
                ),
                _ => println!("  {:<24} K={:<8} no completed trials", r.policy, r.horizon),
            }
        }
    }
    if !summary.failures.is_empty() {
        println!("{} failed cells, see summary.json", summary.failures.len());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(t) = overrides.trials {
                cfg.trials = t;
            }
            if let Some(o) = overrides.out {
                cfg.output = o;
            }
            if let Some(s) = overrides.seed {
                cfg.base_seed = s;
            }
            if let Some(s) = overrides.stride {
                cfg.stride = s;
            }
            let summary = run_experiment(
                &cfg,
                RunOptions {
                    parallel: !overrides.serial,
                },
            )
            .with_context(|| format!("running {}", config.display()))?;
            report(&summary);
        }
        Command::Fig1 {
            k_max,
            trials,
            out,
            stride,
            seed,
            serial,
        } => {
            let mut cfg = fig1_config(k_max, trials, out);
            if let Some(s) = stride {
                cfg.stride = s;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let summary = run_experiment(&cfg, RunOptions { parallel: !serial })?;
            report(&summary);
        }
        Command::Params { policy, d, k, b, v } => {
            let choice = match policy {
                ParamPolicy::Woful => select_woful_params(d, k, b, v)?,
                ParamPolicy::Save => select_save_params(d, k, b, v)?,
            };
            println!("{}", serde_json::to_string_pretty(&choice)?);
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let settings = validate_experiment(&cfg)?;
            println!(
                "{}: ok ({} settings, {} policies, {} horizons, {} trials)",
                config.display(),
                settings.len(),
                cfg.policies.len(),
                cfg.horizons.len(),
                cfg.trials
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VARBAND_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
