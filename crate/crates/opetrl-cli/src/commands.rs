//! The train / eval / sweep entry points.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use opetrl_core::agent::{AgentState, DdqnAgent};
use opetrl_core::channel::RayleighGain;
use opetrl_core::seeding::derive_seed;
use opetrl_core::sim::{aggregate, run_episode, EpisodeOutcome, Metrics, Policy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::AppConfig;
use crate::csvio::{self, SummaryRow};
use crate::{checkpoint, verify};

/// Stream tags for deriving independent seeds per purpose.
const STREAM_AGENT_INIT: u64 = 0x0A11;
const STREAM_TRAIN_EPISODE: u64 = 0x0E01;
const STREAM_EVAL_EPISODE: u64 = 0x0E02;

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn fresh_agent(cfg: &AppConfig, seed: u64) -> Result<DdqnAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_AGENT_INIT));
    DdqnAgent::new(cfg.sim.agent.clone(), &cfg.sim.system, &mut rng).map_err(|e| anyhow!("{e}"))
}

pub struct TrainReport {
    pub checkpoint_path: PathBuf,
    pub learning_path: PathBuf,
    pub episodes: u32,
    pub final_epsilon: f64,
    pub transitions: u64,
}

/// Trains the mode-selection agent with the full pipeline and writes the
/// checkpoint plus a per-episode learning curve.
pub fn train(
    cfg: &AppConfig,
    out_dir: &Path,
    seed: u64,
    episodes_override: Option<u32>,
) -> Result<TrainReport> {
    ensure_out_dir(out_dir)?;
    let mut sim = cfg.sim.clone();
    sim.policy = Policy::Opetrl;
    let episodes = episodes_override.unwrap_or(cfg.train_episodes).max(1);

    let mut agent = fresh_agent(cfg, seed)?;
    let mut rows = Vec::with_capacity(episodes as usize);
    let mut transitions: u64 = 0;
    let mut final_epsilon = sim.agent.eps_start;
    for ep in 0..episodes {
        let epsilon = sim.agent.epsilon_for_episode(ep, episodes);
        final_epsilon = epsilon;
        let ep_seed = derive_seed(seed, STREAM_TRAIN_EPISODE ^ (ep as u64) << 16);
        if !cfg.train_raw_bits_cycle.is_empty() {
            let i = ep as usize % cfg.train_raw_bits_cycle.len();
            sim.system.raw_bits = cfg.train_raw_bits_cycle[i];
        }
        let out = run_episode(&sim, &RayleighGain, Some(&mut agent), epsilon, true, ep_seed)
            .map_err(|e| anyhow!("episode {ep}: {e}"))?;
        transitions += out.transitions_pushed as u64;
        let loss_mean = if out.losses.is_empty() {
            None
        } else {
            Some(out.losses.iter().sum::<f64>() / out.losses.len() as f64)
        };
        rows.push((ep, epsilon, out.transitions_pushed, out.reward_sum, loss_mean));
    }

    let checkpoint_path = out_dir.join("checkpoint.bin");
    checkpoint::save(&checkpoint_path, &agent.online)?;
    let learning_path = out_dir.join("learning.csv");
    csvio::write_csv(&learning_path, &csvio::learning_csv(&rows))?;
    Ok(TrainReport { checkpoint_path, learning_path, episodes, final_epsilon, transitions })
}

pub struct EvalReport {
    pub metrics: Vec<Metrics>,
    pub metrics_path: PathBuf,
}

/// Runs evaluation episodes for one policy configuration (agents act
/// greedily) and, for each episode, materializes its metrics row plus the
/// per-slot and per-task trace CSVs. Returns the in-memory metrics too.
pub fn eval(
    cfg: &AppConfig,
    out_dir: &Path,
    seed: u64,
    checkpoint_path: Option<&Path>,
    episodes_override: Option<u32>,
) -> Result<EvalReport> {
    ensure_out_dir(out_dir)?;
    let episodes = episodes_override.unwrap_or(cfg.sim.episodes).max(1);
    let outcomes = eval_outcomes(cfg, cfg.sim.policy, seed, checkpoint_path, episodes)?;

    let rows: Vec<(u32, u64, Metrics)> = outcomes
        .iter()
        .enumerate()
        .map(|(ep, (ep_seed, out))| (ep as u32, *ep_seed, out.metrics))
        .collect();
    let metrics_path = out_dir.join("metrics.csv");
    csvio::write_csv(&metrics_path, &csvio::metrics_csv(&rows))?;
    for (ep, (_, out)) in outcomes.iter().enumerate() {
        csvio::write_csv(&out_dir.join(format!("trace_ep{ep:03}.csv")), &csvio::trace_csv(&out.trace))?;
        csvio::write_csv(&out_dir.join(format!("tasks_ep{ep:03}.csv")), &csvio::tasks_csv(&out.trace))?;
    }
    Ok(EvalReport { metrics: outcomes.into_iter().map(|(_, o)| o.metrics).collect(), metrics_path })
}

/// Evaluation episodes for an explicit policy; used by `eval` and `sweep`.
pub fn eval_outcomes(
    cfg: &AppConfig,
    policy: Policy,
    seed: u64,
    checkpoint_path: Option<&Path>,
    episodes: u32,
) -> Result<Vec<(u64, EpisodeOutcome)>> {
    let mut sim = cfg.sim.clone();
    sim.policy = policy;
    let template_agent = match policy {
        Policy::Opetrl => {
            let path = checkpoint_path
                .ok_or_else(|| anyhow!("the OPETRL policy needs --checkpoint"))?;
            let expected = AgentState::feature_len(sim.agent.max_tasks);
            let net = checkpoint::load(path, expected)?;
            let mut agent = fresh_agent(cfg, seed)?;
            agent.online = net.clone();
            agent.target = net;
            Some(agent)
        }
        _ => None,
    };

    (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let ep_seed = derive_seed(seed, STREAM_EVAL_EPISODE ^ (ep as u64) << 16);
            let mut agent = template_agent.clone();
            let out = run_episode(&sim, &RayleighGain, agent.as_mut(), 0.0, false, ep_seed)
                .map_err(|e| anyhow!("episode {ep}: {e}"))?;
            Ok((ep_seed, out))
        })
        .collect()
}

/// Sweepable configuration variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    RawBits,
    PMax,
}

impl SweepVar {
    pub fn parse(s: &str) -> Result<SweepVar> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw_bits" | "raw_bits_s" | "s" => Ok(SweepVar::RawBits),
            "p_max" | "p_max_w" | "pmax" => Ok(SweepVar::PMax),
            other => bail!("unknown sweep variable `{other}` (raw_bits|p_max)"),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            SweepVar::RawBits => "raw_bits",
            SweepVar::PMax => "p_max_w",
        }
    }

    fn apply(self, cfg: &mut AppConfig, value: f64) -> Result<()> {
        cfg.set(self.key(), &value.to_string())
    }
}

/// Runs `episodes` evaluation episodes for every (policy, value) pair and
/// writes one aggregated summary row each. Episodes run in parallel; rows
/// are emitted in deterministic (policy, value) order.
pub fn sweep(
    cfg: &AppConfig,
    out_dir: &Path,
    seed: u64,
    var: SweepVar,
    values: &[f64],
    policies: &[Policy],
    checkpoint_path: Option<&Path>,
    episodes_override: Option<u32>,
) -> Result<Vec<SummaryRow>> {
    ensure_out_dir(out_dir)?;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let episodes = episodes_override.unwrap_or(cfg.sim.episodes).max(1);
    if policies.contains(&Policy::Opetrl) && checkpoint_path.is_none() {
        bail!("sweeping the OPETRL policy needs --checkpoint");
    }

    let mut rows = Vec::with_capacity(policies.len() * values.len());
    for &policy in policies {
        for &value in values {
            let mut point_cfg = cfg.clone();
            var.apply(&mut point_cfg, value)?;
            let outcomes =
                eval_outcomes(&point_cfg, policy, seed, checkpoint_path, episodes)?;
            let metrics: Vec<Metrics> = outcomes.iter().map(|(_, o)| o.metrics).collect();
            let agg = aggregate(&metrics);
            rows.push(SummaryRow {
                policy: policy.name(),
                sweep_var: var.key().to_string(),
                sweep_value: value,
                success_prob_mean: agg.success_mean,
                success_prob_se: agg.success_se,
                energy_j_mean: agg.energy_mean_j,
                energy_j_se: agg.energy_se_j,
                episodes: agg.episodes,
                seed,
            });
        }
    }
    csvio::write_csv(&out_dir.join("summary.csv"), &csvio::summary_csv(&rows))?;
    Ok(rows)
}

/// Runs every registered self-check; returns false when any failed.
pub fn verify_all(seed: u64) -> bool {
    let mut all_ok = true;
    for check in verify::registry() {
        let result = (check.run)(seed);
        let status = if result.passed { "ok  " } else { "FAIL" };
        println!("[{status}] {:<42} {}", check.name, result.detail);
        all_ok &= result.passed;
    }
    all_ok
}
