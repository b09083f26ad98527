use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use opetrl_cli::commands::{self, SweepVar};
use opetrl_cli::config::AppConfig;
use opetrl_core::sim::Policy;

/// Energy-minimal multi-task split inference on a solar-harvesting UAV:
/// train the mode-selection agent, evaluate policies, sweep parameters and
/// run the self-checks.
#[derive(Parser)]
#[command(name = "opetrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; omitted, a recorded random seed is drawn and printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Configuration overrides, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Episode count override.
    #[arg(long)]
    episodes: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DDQN mode selector with the full pipeline; writes
    /// checkpoint.bin and learning.csv.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run evaluation episodes; writes metrics.csv and per-episode traces.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Policy to evaluate (opetrl | one_task | greedy).
        #[arg(long)]
        policy: Option<String>,
        /// Trained network (required for the opetrl policy).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep a configuration variable across values and policies; writes
    /// summary.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Variable to sweep: raw_bits | p_max.
        #[arg(long)]
        sweep: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Restrict to one policy (default: all three).
        #[arg(long)]
        policy: Option<String>,
        /// Trained network (required when the opetrl policy is swept).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every registered self-check; exits non-zero on any failure.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(common: &CommonArgs) -> Result<AppConfig> {
    let mut cfg = match &common.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    cfg.apply_overrides(&common.set)?;
    Ok(cfg)
}

/// The master seed: the flag when given, otherwise a recorded random draw.
fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let nanos =
                SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_nanos();
            let drawn = (nanos as u64) ^ (nanos >> 64) as u64 ^ std::process::id() as u64;
            println!("seed = {drawn}  # drawn at random; pass --seed {drawn} to reproduce");
            drawn
        }
    }
}

fn parse_policy(s: &str) -> Result<Policy> {
    Policy::parse(s).ok_or_else(|| anyhow!("unknown policy `{s}` (opetrl|one_task|greedy)"))
}

fn run() -> Result<bool> {
    match Cli::parse().command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let seed = resolve_seed(common.seed);
            let report = commands::train(&cfg, &common.out, seed, common.episodes)?;
            println!(
                "trained {} episodes ({} transitions, final epsilon {:.3})",
                report.episodes, report.transitions, report.final_epsilon
            );
            println!("checkpoint: {}", report.checkpoint_path.display());
            println!("learning curve: {}", report.learning_path.display());
            Ok(true)
        }
        Command::Eval { common, policy, checkpoint } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = policy {
                cfg.sim.policy = parse_policy(&p)?;
            }
            let seed = resolve_seed(common.seed);
            let report =
                commands::eval(&cfg, &common.out, seed, checkpoint.as_deref(), common.episodes)?;
            let agg = opetrl_core::sim::aggregate(&report.metrics);
            println!(
                "policy {}: success {:.4} +/- {:.4}, energy {:.4e} +/- {:.1e} J over {} episodes",
                cfg.sim.policy.name(),
                agg.success_mean,
                agg.success_se,
                agg.energy_mean_j,
                agg.energy_se_j,
                agg.episodes
            );
            println!("metrics: {}", report.metrics_path.display());
            Ok(true)
        }
        Command::Sweep { common, sweep, values, policy, checkpoint } => {
            let cfg = load_config(&common)?;
            let seed = resolve_seed(common.seed);
            let var = SweepVar::parse(&sweep)?;
            let policies: Vec<Policy> = match policy {
                Some(p) => vec![parse_policy(&p)?],
                None => Policy::all().to_vec(),
            };
            let rows = commands::sweep(
                &cfg,
                &common.out,
                seed,
                var,
                &values,
                &policies,
                checkpoint.as_deref(),
                common.episodes,
            )?;
            for r in &rows {
                println!(
                    "{:<9} {}={:<12} success {:.4} +/- {:.4}  energy {:.4e} J",
                    r.policy,
                    r.sweep_var,
                    r.sweep_value,
                    r.success_prob_mean,
                    r.success_prob_se,
                    r.energy_j_mean
                );
            }
            println!("summary: {}", common.out.join("summary.csv").display());
            Ok(true)
        }
        Command::Verify { seed } => {
            let seed = resolve_seed(seed);
            Ok(commands::verify_all(seed))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
