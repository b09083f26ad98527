//! Classification jobs and their timing bookkeeping.

use crate::params::SystemParams;

/// How a task leaves the UAV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Direct transmission: the raw sample is sent as-is.
    Dt,
    /// Computation-transmission: the device computes a feature map first and
    /// transmits that instead.
    Ct,
}

impl Mode {
    /// Action index used by the mode-selection agent (DT first).
    pub fn action_index(self) -> usize {
        match self {
            Mode::Dt => 0,
            Mode::Ct => 1,
        }
    }

    pub fn from_action_index(idx: usize) -> Mode {
        if idx == 0 {
            Mode::Dt
        } else {
            Mode::Ct
        }
    }
}

/// One classification job, from arrival to delivery.
///
/// Slot fields are absolute slot indices. A task arriving at `arrive_slot`
/// must be fully delivered before `deadline_slot = arrive_slot + C`
/// (exclusive); `start_slot` is set once its first transmission slot runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub arrive_slot: u32,
    pub mode: Mode,
    /// Payload in bits: the feature map for CT, the raw sample for DT.
    pub payload_bits: f64,
    /// Chosen compute speed in Hz; zero exactly when the mode is DT.
    pub comp_speed_hz: f64,
    /// Compute time charged on the slot grid (zero for DT).
    pub comp_slots: u32,
    /// First transmission slot, once known.
    pub start_slot: Option<u32>,
    /// Number of slots the transmission occupied, once finished.
    pub trans_slots: u32,
    /// Slots spent waiting in the computation queue.
    pub queue_comp_slots: u32,
    /// Slots spent waiting in the transmission queue.
    pub queue_trans_slots: u32,
    pub deadline_slot: u32,
}

impl Task {
    /// A fresh task in the given mode. Payload and deadline follow from the
    /// system parameters; compute fields are filled by the caller for CT.
    pub fn new(id: usize, arrive_slot: u32, mode: Mode, params: &SystemParams) -> Task {
        Task {
            id,
            arrive_slot,
            mode,
            payload_bits: crate::model::task_payload(mode, params),
            comp_speed_hz: 0.0,
            comp_slots: 0,
            start_slot: None,
            trans_slots: 0,
            queue_comp_slots: 0,
            queue_trans_slots: 0,
            deadline_slot: arrive_slot + params.deadline_slots,
        }
    }

    /// Earliest slot the task's data can be transmitted: arrival plus
    /// compute-queue wait plus compute time.
    pub fn ready_slot(&self) -> u32 {
        self.arrive_slot + self.queue_comp_slots + self.comp_slots
    }

    /// Causality check: transmission cannot start before the data exists.
    pub fn causality_holds(&self) -> bool {
        match self.start_slot {
            Some(s) => s >= self.ready_slot(),
            None => true,
        }
    }
}
