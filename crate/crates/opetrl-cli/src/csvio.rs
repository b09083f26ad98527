//! CSV emission. All writers render floats through `Display` (shortest
//! round-trip form) and fixed column orders, so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use opetrl_core::power::{PowerSchedule, TimeAllocation};
use opetrl_core::sim::{EpisodeTrace, Metrics};
use opetrl_core::task::Mode;

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Dt => "dt",
        Mode::Ct => "ct",
    }
}

/// Per-slot trace: `slot,gain,power_watts,rate_bps,battery_j,queue_len`.
pub fn trace_csv(trace: &EpisodeTrace) -> String {
    let mut s = String::from("slot,gain,power_watts,rate_bps,battery_j,queue_len\n");
    for r in &trace.slots {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.slot, r.gain, r.power_w, r.rate_bps, r.battery_j, r.queue_len
        );
    }
    s
}

/// Per-task trace:
/// `task_id,mode,payload_bits,arrive_slot,ready_slot,start_slot,finish_slot,met,abandoned,delivered_bits`.
pub fn tasks_csv(trace: &EpisodeTrace) -> String {
    let mut s = String::from(
        "task_id,mode,payload_bits,arrive_slot,ready_slot,start_slot,finish_slot,met,abandoned,delivered_bits\n",
    );
    let opt = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for t in &trace.tasks {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            t.id,
            mode_name(t.mode),
            t.payload_bits,
            t.arrive_slot,
            t.ready_slot,
            opt(t.start_slot),
            opt(t.finish_slot),
            t.met,
            t.abandoned,
            t.delivered_bits
        );
    }
    s
}

/// Per-episode metrics:
/// `episode,seed,tasks_generated,tasks_met,success_prob,energy_tx_j,energy_comp_j,total_energy_j`.
pub fn metrics_csv(rows: &[(u32, u64, Metrics)]) -> String {
    let mut s = String::from(
        "episode,seed,tasks_generated,tasks_met,success_prob,energy_tx_j,energy_comp_j,total_energy_j\n",
    );
    for (episode, seed, m) in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            episode,
            seed,
            m.tasks_generated,
            m.tasks_met,
            m.success_prob,
            m.energy_tx_j,
            m.energy_comp_j,
            m.total_energy_j
        );
    }
    s
}

/// One aggregated sweep row.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub policy: &'static str,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub success_prob_mean: f64,
    pub success_prob_se: f64,
    pub energy_j_mean: f64,
    pub energy_j_se: f64,
    pub episodes: usize,
    pub seed: u64,
}

/// Sweep summary:
/// `policy,sweep_var,sweep_value,success_prob_mean,success_prob_se,energy_J_mean,energy_J_se,episodes,seed`.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "policy,sweep_var,sweep_value,success_prob_mean,success_prob_se,energy_J_mean,energy_J_se,episodes,seed\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.policy,
            r.sweep_var,
            r.sweep_value,
            r.success_prob_mean,
            r.success_prob_se,
            r.energy_j_mean,
            r.energy_j_se,
            r.episodes,
            r.seed
        );
    }
    s
}

/// Learning curve: `episode,epsilon,transitions,reward_sum_j,loss_mean`.
pub fn learning_csv(rows: &[(u32, f64, u32, f64, Option<f64>)]) -> String {
    let mut s = String::from("episode,epsilon,transitions,reward_sum_j,loss_mean\n");
    for (episode, epsilon, transitions, reward, loss) in rows {
        let loss_s = loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{episode},{epsilon},{transitions},{reward},{loss_s}");
    }
    s
}

/// Power schedule: `slot,power_watts`.
pub fn schedule_csv(schedule: &PowerSchedule) -> String {
    let mut s = String::from("slot,power_watts\n");
    for (i, p) in schedule.powers_w.iter().enumerate() {
        let _ = writeln!(s, "{},{}", schedule.start_slot + i as u32, p);
    }
    s
}

/// Window allocation: `task_id,start_slot,len_slots`.
pub fn allocation_csv(alloc: &TimeAllocation) -> String {
    let mut s = String::from("task_id,start_slot,len_slots\n");
    for e in &alloc.entries {
        let _ = writeln!(s, "{},{},{}", e.task_id, e.start_slot, e.len_slots);
    }
    s
}

pub fn write_csv(path: &Path, content: &str) -> Result<()> {
    write_file(path, content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_and_allocation_formats() {
        let sched = PowerSchedule { start_slot: 3, powers_w: vec![0.5, 0.25], feasible: true };
        assert_eq!(schedule_csv(&sched), "slot,power_watts\n3,0.5\n4,0.25\n");
        let alloc = TimeAllocation {
            entries: vec![opetrl_core::power::AllocEntry {
                task_id: 7,
                start_slot: 2,
                len_slots: 5,
            }],
        };
        assert_eq!(allocation_csv(&alloc), "task_id,start_slot,len_slots\n7,2,5\n");
    }

    #[test]
    fn summary_schema_matches_contract() {
        let rows = [SummaryRow {
            policy: "greedy",
            sweep_var: "raw_bits".into(),
            sweep_value: 20000.0,
            success_prob_mean: 0.5,
            success_prob_se: 0.01,
            energy_j_mean: 1.5e-4,
            energy_j_se: 2.0e-6,
            episodes: 24,
            seed: 9,
        }];
        let out = summary_csv(&rows);
        let mut lines = out.lines();
        assert_eq!(
            lines.next().unwrap(),
            "policy,sweep_var,sweep_value,success_prob_mean,success_prob_se,energy_J_mean,energy_J_se,episodes,seed"
        );
        assert_eq!(lines.next().unwrap(), "greedy,raw_bits,20000,0.5,0.01,0.00015,0.000002,24,9");
    }
}
