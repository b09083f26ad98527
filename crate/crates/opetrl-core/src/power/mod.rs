//! The embedded optimizer: per-task capped water-filling, slot-granular
//! transmission-window allocation across the queue, SAA sample sizing, and
//! consensus restoration of the per-sample power plans.

mod allocation;
mod saa;
mod waterfill;

pub use allocation::{
    allocate_feasible, allocate_times, default_loop_cap, theorem3_residual, AllocEntry,
    TimeAllocation, TxRequest,
};
pub use saa::{
    restore_power, saa_sample_count, solve_p1b, solve_subproblem, P1bSolution, SaaConfig,
    SaaFormula, SubproblemSolution,
};
pub use waterfill::{optimal_power_single_task, schedule_energy, Waterfill};

use alloc::vec::Vec;

/// Per-slot transmit powers over a planning horizon.
///
/// `feasible` is false when the plan could not meet every rate constraint
/// even at the power cap; the powers then carry the best-effort schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSchedule {
    pub start_slot: u32,
    pub powers_w: Vec<f64>,
    pub feasible: bool,
}

impl PowerSchedule {
    pub fn zeros(start_slot: u32, len: usize) -> Self {
        PowerSchedule { start_slot, powers_w: alloc::vec![0.0; len], feasible: true }
    }

    pub fn len(&self) -> usize {
        self.powers_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers_w.is_empty()
    }

    /// Power at an absolute slot, zero outside the horizon.
    pub fn power_at(&self, slot: u32) -> f64 {
        if slot < self.start_slot {
            return 0.0;
        }
        self.powers_w.get((slot - self.start_slot) as usize).copied().unwrap_or(0.0)
    }

    /// Total energy of the schedule: slot length times the power sum.
    pub fn energy_j(&self, slot_s: f64) -> f64 {
        schedule_energy(&self.powers_w, slot_s)
    }
}
