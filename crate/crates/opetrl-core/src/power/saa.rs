//! Sample-average approximation of the channel chance constraint.
//!
//! The deadline constraint under a random channel is required to hold with
//! probability at least `1 - epsilon`. It is replaced by `K` deterministic
//! copies, one per sampled channel trace; each copy is solved independently
//! (window allocation plus per-window water-filling) and the per-slot
//! transmit power is restored from the copies by consensus averaging.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelTrace, GainSampler};
use crate::error::CoreError;
use crate::math;
use crate::params::SystemParams;
use crate::power::allocation::{allocate_feasible, TxRequest};
use crate::power::waterfill::optimal_power_single_task;
use crate::power::PowerSchedule;

/// Which printed form of the sample-count bound to use.
///
/// The corrected variant adds the log term to the radical instead of
/// multiplying it, matching the usual shape of SAA sample bounds; the
/// default is the bound exactly as stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaaFormula {
    Printed,
    Corrected,
}

/// SAA tuning: violation budget, confidence slack and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaConfig {
    /// Maximum probability the deadline constraint may be violated.
    pub epsilon: f64,
    /// Confidence slack of the sample-count guarantee.
    pub theta: f64,
    /// Explicit sample count; `None` sizes from the bound with the number
    /// of per-slot power variables in the current horizon.
    pub k_samples: Option<usize>,
    pub formula: SaaFormula,
}

impl Default for SaaConfig {
    fn default() -> Self {
        SaaConfig { epsilon: 0.1, theta: 0.05, k_samples: Some(32), formula: SaaFormula::Printed }
    }
}

impl SaaConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CoreError::InvalidConfig("epsilon must lie in (0, 1)"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(CoreError::InvalidConfig("theta must lie in (0, 1)"));
        }
        if self.k_samples == Some(0) {
            return Err(CoreError::InvalidConfig("sample count must be positive"));
        }
        Ok(())
    }

    /// Sample count for a horizon with `n_vars` per-slot power variables.
    pub fn samples_for(&self, n_vars: usize) -> Result<usize, CoreError> {
        match self.k_samples {
            Some(k) => Ok(k),
            None => saa_sample_count(self.epsilon, self.theta, n_vars, self.formula),
        }
    }
}

/// Guaranteed-sufficient SAA sample count for violation budget `epsilon`,
/// confidence slack `theta` and `n_vars` decision variables.
pub fn saa_sample_count(
    epsilon: f64,
    theta: f64,
    n_vars: usize,
    formula: SaaFormula,
) -> Result<usize, CoreError> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(CoreError::Domain("epsilon and theta must lie in (0, 1)"));
    }
    if n_vars < 1 {
        return Err(CoreError::Domain("sample count needs at least one variable"));
    }
    let n = (n_vars - 1) as f64;
    let log_t = math::ln(1.0 / theta);
    let radical = math::sqrt(2.0 * n * log_t + log_t * log_t);
    let inner = match formula {
        SaaFormula::Printed => n + log_t * radical,
        SaaFormula::Corrected => n + log_t + radical,
    };
    Ok(math::ceil(inner / epsilon) as usize)
}

/// One sampled copy of the planning problem, solved to optimality under its
/// own trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub schedule: PowerSchedule,
    /// Tasks whose deadline cannot be met under this sample even at the
    /// power cap (payload does not fit its window, or no window exists).
    pub infeasible_ids: Vec<usize>,
}

/// Solves one sampled subproblem: allocate windows on the sample's trace,
/// water-fill each window, and concatenate the per-slot powers over the
/// horizon. An empty queue yields the all-zero schedule.
pub fn solve_subproblem(
    requests: &[TxRequest],
    trace: &ChannelTrace,
    now_slot: u32,
    p_max_w: f64,
    slot_s: f64,
    bandwidth_hz: f64,
    loop_cap: u32,
) -> Result<SubproblemSolution, CoreError> {
    let horizon = trace.len();
    if requests.is_empty() {
        return Ok(SubproblemSolution {
            schedule: PowerSchedule::zeros(trace.start_slot, horizon),
            infeasible_ids: Vec::new(),
        });
    }
    let (alloc, mut infeasible_ids) =
        allocate_feasible(requests, trace, now_slot, p_max_w, slot_s, bandwidth_hz, loop_cap)?;
    let mut powers = alloc::vec![0.0; horizon];
    for entry in &alloc.entries {
        let req = requests
            .iter()
            .find(|r| r.id == entry.task_id)
            .expect("allocation carries only known tasks");
        let wf = optimal_power_single_task(
            req.payload_bits,
            trace.window(entry.start_slot, entry.len_slots as usize),
            p_max_w,
            slot_s,
            bandwidth_hz,
        )?;
        if !wf.feasible {
            infeasible_ids.push(entry.task_id);
        }
        let off = (entry.start_slot - trace.start_slot) as usize;
        powers[off..off + entry.len_slots as usize].copy_from_slice(&wf.powers_w);
    }
    let feasible = infeasible_ids.is_empty();
    Ok(SubproblemSolution {
        schedule: PowerSchedule { start_slot: trace.start_slot, powers_w: powers, feasible },
        infeasible_ids,
    })
}

/// Consensus restoration: the per-slot arithmetic mean of the local copies,
/// clamped into `[0, p_max]`.
pub fn restore_power(schedules: &[PowerSchedule], p_max_w: f64) -> Result<PowerSchedule, CoreError> {
    let first = schedules.first().ok_or(CoreError::Domain("restoration needs schedules"))?;
    let horizon = first.len();
    for s in schedules {
        if s.len() != horizon || s.start_slot != first.start_slot {
            return Err(CoreError::HorizonMismatch { expected: horizon, got: s.len() });
        }
    }
    let k = schedules.len() as f64;
    let powers_w: Vec<f64> = (0..horizon)
        .map(|t| {
            let mean = schedules.iter().map(|s| s.powers_w[t]).sum::<f64>() / k;
            mean.clamp(0.0, p_max_w)
        })
        .collect();
    let feasible = schedules.iter().all(|s| s.feasible);
    Ok(PowerSchedule { start_slot: first.start_slot, powers_w, feasible })
}

/// The restored plan together with its chance-feasibility bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct P1bSolution {
    pub schedule: PowerSchedule,
    /// Set when more than `epsilon * K` samples were infeasible; the
    /// schedule then averages every copy on a best-effort basis.
    pub chance_infeasible: bool,
    /// Number of infeasible samples.
    pub sample_failures: usize,
    pub k_samples: usize,
    /// Per task: in how many samples its deadline could not be met.
    pub task_failures: Vec<(usize, usize)>,
}

impl P1bSolution {
    /// Tasks that failed in more than `epsilon * K` samples, i.e. whose
    /// deadline cannot be promised within the violation budget.
    pub fn hopeless_tasks(&self, epsilon: f64) -> Vec<usize> {
        let budget = epsilon * self.k_samples as f64;
        self.task_failures
            .iter()
            .filter(|(_, fails)| *fails as f64 > budget)
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Full chance-constrained solve: draw `K` traces, solve the `K`
/// subproblems, restore the consensus schedule. Deterministic given the
/// seed; the subproblems are independent and run in parallel when the
/// `parallel` feature is enabled.
///
/// Samples that are infeasible are dropped from the average as long as they
/// stay within the violation budget `epsilon * K`; past that the result is
/// flagged chance-infeasible.
#[allow(clippy::too_many_arguments)]
pub fn solve_p1b(
    requests: &[TxRequest],
    now_slot: u32,
    horizon_len: usize,
    saa: &SaaConfig,
    sampler: &(dyn GainSampler + Sync),
    seed: u64,
    params: &SystemParams,
    loop_cap: u32,
) -> Result<P1bSolution, CoreError> {
    saa.validate()?;
    if horizon_len == 0 {
        return Err(CoreError::Domain("planning horizon must be non-empty"));
    }
    let k = saa.samples_for(horizon_len)?;
    if requests.is_empty() {
        return Ok(P1bSolution {
            schedule: PowerSchedule::zeros(now_slot, horizon_len),
            chance_infeasible: false,
            sample_failures: 0,
            k_samples: k,
            task_failures: Vec::new(),
        });
    }

    let solve_one = |sample_idx: usize| -> Result<SubproblemSolution, CoreError> {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeding::derive_seed(seed, sample_idx as u64));
        let trace = ChannelTrace::sample(sampler, params, now_slot, horizon_len, &mut rng)?;
        solve_subproblem(
            requests,
            &trace,
            now_slot,
            params.p_max_w,
            params.slot_s,
            params.bandwidth_hz,
            loop_cap,
        )
    };

    #[cfg(feature = "parallel")]
    let solutions: Result<Vec<SubproblemSolution>, CoreError> = {
        use rayon::prelude::*;
        (0..k).into_par_iter().map(solve_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let solutions: Result<Vec<SubproblemSolution>, CoreError> = (0..k).map(solve_one).collect();
    let solutions = solutions?;

    let mut task_failures: Vec<(usize, usize)> =
        requests.iter().map(|r| (r.id, 0usize)).collect();
    for sol in &solutions {
        for id in &sol.infeasible_ids {
            if let Some(entry) = task_failures.iter_mut().find(|(tid, _)| tid == id) {
                entry.1 += 1;
            }
        }
    }
    let sample_failures = solutions.iter().filter(|s| !s.schedule.feasible).count();
    let chance_infeasible = sample_failures as f64 > saa.epsilon * k as f64;

    let pool: Vec<PowerSchedule> = if chance_infeasible || sample_failures == k {
        solutions.into_iter().map(|s| s.schedule).collect()
    } else {
        solutions.into_iter().filter(|s| s.schedule.feasible).map(|s| s.schedule).collect()
    };
    let mut schedule = restore_power(&pool, params.p_max_w)?;
    schedule.feasible = !chance_infeasible;

    Ok(P1bSolution { schedule, chance_infeasible, sample_failures, k_samples: k, task_failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ConstantGain, RayleighGain};

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn sample_count_degenerate_case() {
        // N = 1 collapses the bound: ceil(2 * (0 + 1 * sqrt(0 + 1))) = 2.
        let k = saa_sample_count(0.5, math_e_inv(), 1, SaaFormula::Printed).unwrap();
        assert_eq!(k, 2);
    }

    fn math_e_inv() -> f64 {
        crate::math::exp(-1.0)
    }

    #[test]
    fn sample_count_frozen_fixture() {
        // Direct evaluation of the bound at eps=0.1, theta=0.05, N=11.
        assert_eq!(saa_sample_count(0.1, 0.05, 11, SaaFormula::Printed).unwrap(), 349);
        assert_eq!(saa_sample_count(0.1, 0.05, 11, SaaFormula::Corrected).unwrap(), 213);
    }

    #[test]
    fn sample_count_monotone_in_epsilon() {
        let mut prev = 0;
        for &eps in &[0.5, 0.2, 0.1, 0.05, 0.01] {
            let k = saa_sample_count(eps, 0.05, 8, SaaFormula::Printed).unwrap();
            assert!(k > prev, "K must grow as epsilon shrinks");
            prev = k;
        }
    }

    #[test]
    fn sample_count_rejects_bad_probabilities() {
        assert!(saa_sample_count(0.0, 0.5, 4, SaaFormula::Printed).is_err());
        assert!(saa_sample_count(1.0, 0.5, 4, SaaFormula::Printed).is_err());
        assert!(saa_sample_count(0.1, 1.0, 4, SaaFormula::Printed).is_err());
        assert!(saa_sample_count(0.1, 0.5, 0, SaaFormula::Printed).is_err());
    }

    #[test]
    fn empty_queue_gives_zero_schedule() {
        let trace = ChannelTrace::new(4, alloc::vec![1.0e4; 10]).unwrap();
        let sol = solve_subproblem(&[], &trace, 4, 1e-5, 0.1, 2e6, 100).unwrap();
        assert!(sol.schedule.powers_w.iter().all(|&p| p == 0.0));
        assert!(sol.schedule.feasible);
    }

    #[test]
    fn subproblem_delivers_each_task_payload() {
        use crate::model::rate_unchecked;
        let p = params();
        let trace = ChannelTrace::new(0, alloc::vec![1.2e4; 30]).unwrap();
        let reqs = [
            TxRequest { id: 0, ready_slot: 0, deadline_slot: 12, payload_bits: 15_000.0 },
            TxRequest { id: 1, ready_slot: 3, deadline_slot: 30, payload_bits: 22_000.0 },
        ];
        let sol = solve_subproblem(&reqs, &trace, 0, p.p_max_w, p.slot_s, p.bandwidth_hz, 500)
            .unwrap();
        assert!(sol.schedule.feasible);
        // Recompute delivered bits per window from the concatenated powers.
        let delivered = |lo: usize, hi: usize| -> f64 {
            (lo..hi)
                .map(|t| p.slot_s * rate_unchecked(sol.schedule.powers_w[t], trace.gains[t], p.bandwidth_hz))
                .sum()
        };
        // Window boundary is wherever task 0's powers end; find the split by
        // locating the last positive slot before task 1's region.
        let total: f64 = delivered(0, 30);
        assert!(total >= 15_000.0 + 22_000.0 - 1e-3);
    }

    #[test]
    fn restore_power_examples() {
        let a = PowerSchedule { start_slot: 0, powers_w: alloc::vec![0.0, 2.0], feasible: true };
        let b = PowerSchedule { start_slot: 0, powers_w: alloc::vec![2.0, 0.0], feasible: true };
        let mean = restore_power(&[a.clone(), b], 10.0).unwrap();
        assert_eq!(mean.powers_w, alloc::vec![1.0, 1.0]);
        let same = restore_power(&[a.clone(), a.clone(), a.clone()], 10.0).unwrap();
        assert_eq!(same.powers_w, a.powers_w);
        let clamped = restore_power(&[a.clone()], 1.5).unwrap();
        assert_eq!(clamped.powers_w, alloc::vec![0.0, 1.5]);
    }

    #[test]
    fn restore_power_rejects_mismatched_horizons() {
        let a = PowerSchedule { start_slot: 0, powers_w: alloc::vec![1.0], feasible: true };
        let b = PowerSchedule { start_slot: 0, powers_w: alloc::vec![1.0, 2.0], feasible: true };
        assert!(matches!(
            restore_power(&[a, b], 1.0),
            Err(CoreError::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn k_equal_one_matches_single_subproblem() {
        let p = params();
        let saa = SaaConfig { k_samples: Some(1), ..Default::default() };
        let reqs =
            [TxRequest { id: 0, ready_slot: 0, deadline_slot: 20, payload_bits: 18_000.0 }];
        let sol = solve_p1b(&reqs, 0, 20, &saa, &RayleighGain, 77, &p, 500).unwrap();
        // Re-derive the single trace with the same stream and solve directly.
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seeding::derive_seed(77, 0));
        let trace = ChannelTrace::sample(&RayleighGain, &p, 0, 20, &mut rng).unwrap();
        let direct =
            solve_subproblem(&reqs, &trace, 0, p.p_max_w, p.slot_s, p.bandwidth_hz, 500).unwrap();
        assert_eq!(sol.schedule, direct.schedule);
    }

    #[test]
    fn deterministic_sampler_makes_restoration_identity() {
        let p = params();
        let saa = SaaConfig { k_samples: Some(8), ..Default::default() };
        let reqs =
            [TxRequest { id: 0, ready_slot: 0, deadline_slot: 16, payload_bits: 9_000.0 }];
        let sol = solve_p1b(&reqs, 0, 16, &saa, &ConstantGain(1.0), 5, &p, 500).unwrap();
        let trace = ChannelTrace::mean(&p, 0, 16).unwrap();
        let direct =
            solve_subproblem(&reqs, &trace, 0, p.p_max_w, p.slot_s, p.bandwidth_hz, 500).unwrap();
        for (a, b) in sol.schedule.powers_w.iter().zip(&direct.schedule.powers_w) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn solve_p1b_is_deterministic_in_seed() {
        let p = params();
        let saa = SaaConfig { k_samples: Some(6), ..Default::default() };
        let reqs = [
            TxRequest { id: 0, ready_slot: 0, deadline_slot: 14, payload_bits: 12_000.0 },
            TxRequest { id: 1, ready_slot: 2, deadline_slot: 25, payload_bits: 8_000.0 },
        ];
        let a = solve_p1b(&reqs, 0, 25, &saa, &RayleighGain, 99, &p, 500).unwrap();
        let b = solve_p1b(&reqs, 0, 25, &saa, &RayleighGain, 99, &p, 500).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_task_is_flagged_chance_infeasible() {
        let p = params();
        let saa = SaaConfig { k_samples: Some(8), ..Default::default() };
        // Payload far beyond one slot's capacity at p_max.
        let reqs =
            [TxRequest { id: 0, ready_slot: 0, deadline_slot: 1, payload_bits: 1.0e9 }];
        let sol = solve_p1b(&reqs, 0, 1, &saa, &RayleighGain, 3, &p, 500).unwrap();
        assert!(sol.chance_infeasible);
        assert_eq!(sol.sample_failures, 8);
        assert_eq!(sol.hopeless_tasks(saa.epsilon), alloc::vec![0]);
        assert!(!sol.schedule.feasible);
    }
}
