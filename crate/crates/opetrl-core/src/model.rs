//! Physical models: solar harvesting, achievable rate, compute cost,
//! battery dynamics and queueing delays.

use crate::error::CoreError;
use crate::math;
use crate::params::SystemParams;
use crate::task::{Mode, Task};

/// Attenuation of solar light through a cloud layer: `e^(-beta * d)`.
pub fn cloud_attenuation(absorb_per_m: f64, cloud_thickness_m: f64) -> Result<f64, CoreError> {
    if !(absorb_per_m >= 0.0) || !(cloud_thickness_m >= 0.0) {
        return Err(CoreError::Domain("cloud attenuation takes non-negative inputs"));
    }
    Ok(math::exp(-absorb_per_m * cloud_thickness_m))
}

/// Output power of the solar panel in Watts, constant over a run.
pub fn solar_power(params: &SystemParams) -> f64 {
    let att = math::exp(-params.absorb_per_m * params.cloud_thickness_m);
    params.solar_eff * params.panel_area_m2 * params.irradiance_wm2 * att
}

/// Achievable rate in bits/second at transmit power `p` and effective gain
/// `h`: `W * log2(1 + p*h)`. Strictly increasing and concave in `p`.
pub fn achievable_rate(power_w: f64, effective_h: f64, bandwidth_hz: f64) -> Result<f64, CoreError> {
    if !(power_w >= 0.0) {
        return Err(CoreError::Domain("transmit power must be non-negative"));
    }
    if !(effective_h > 0.0) || !(bandwidth_hz > 0.0) {
        return Err(CoreError::Domain("gain and bandwidth must be positive"));
    }
    Ok(rate_unchecked(power_w, effective_h, bandwidth_hz))
}

/// Rate law without domain checks, for inner loops that already hold the
/// invariants.
#[inline]
pub(crate) fn rate_unchecked(power_w: f64, effective_h: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * math::log2(1.0 + power_w * effective_h)
}

/// Transmit power that delivers exactly `rate_bps` through gain `h`.
/// Inverse of the rate law; unclamped.
#[inline]
pub fn power_for_rate(rate_bps: f64, effective_h: f64, bandwidth_hz: f64) -> f64 {
    (math::exp2(rate_bps / bandwidth_hz) - 1.0) / effective_h
}

/// Wall-clock seconds to produce the feature map at compute speed `f`.
pub fn compute_time(f_hz: f64, params: &SystemParams) -> Result<f64, CoreError> {
    if !(f_hz > 0.0) {
        return Err(CoreError::Domain("compute speed must be positive"));
    }
    Ok(params.flops * params.os_bits as f64 / (f_hz * params.cores as f64 * params.vec_bits as f64))
}

/// Compute time in whole slots (ceiling on the slot grid).
pub fn compute_slots(f_hz: f64, params: &SystemParams) -> Result<u32, CoreError> {
    let t = compute_time(f_hz, params)?;
    Ok(math::ceil(t / params.slot_s) as u32)
}

/// Energy in Joules to produce the feature map at compute speed `f`:
/// `k * f^2 * flops * os_bits / (cores * vec_bits)`. Equals the cubic
/// compute power `k f^3` times the compute time. Zero compute speed (the DT
/// case) costs nothing.
pub fn compute_energy(f_hz: f64, params: &SystemParams) -> f64 {
    params.chip_k * math::powi(f_hz, 2) * params.flops * params.os_bits as f64
        / (params.cores as f64 * params.vec_bits as f64)
}

/// Battery level at a slot boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub energy_j: f64,
}

/// One slot of battery dynamics: add the harvest, subtract the transmit and
/// compute draws, clamp at capacity (overflow energy is discarded).
///
/// A step that would drive the level negative is infeasible and returns
/// `BatteryDepleted`; the simulator reacts by zeroing that slot's transmit
/// power rather than letting the level go negative.
pub fn battery_step(
    state: BatteryState,
    harvest_j: f64,
    e_trans_j: f64,
    e_comp_j: f64,
    cap_j: f64,
) -> Result<BatteryState, CoreError> {
    debug_assert!(harvest_j >= 0.0 && e_trans_j >= 0.0 && e_comp_j >= 0.0);
    let next = state.energy_j + harvest_j - e_trans_j - e_comp_j;
    if next < 0.0 {
        return Err(CoreError::BatteryDepleted);
    }
    Ok(BatteryState { energy_j: next.min(cap_j) })
}

/// Payload carried over the air for the given mode: the feature map for CT,
/// the raw sample for DT.
pub fn task_payload(mode: Mode, params: &SystemParams) -> f64 {
    match mode {
        Mode::Ct => params.feat_bits(),
        Mode::Dt => params.raw_bits,
    }
}

/// Queueing delays of a task given its predecessor, in slots.
///
/// The computation-queue wait is how far the predecessor's compute phase
/// overlaps this task's arrival; the transmission-queue wait is whatever gap
/// remains between the data being ready and the transmission actually
/// starting (`cur.start_slot` must be known).
pub fn update_queue_delays(prev: Option<&Task>, cur: &Task) -> Result<(u32, u32), CoreError> {
    let start = cur
        .start_slot
        .ok_or(CoreError::Domain("queue delays need the task's start slot"))?;
    let queue_comp = match prev {
        None => 0,
        Some(p) => {
            if p.arrive_slot > cur.arrive_slot {
                return Err(CoreError::Domain("tasks must be ordered by arrival"));
            }
            let prev_comp = if p.mode == Mode::Ct { p.comp_slots } else { 0 };
            let prev_busy_end = p.arrive_slot + p.queue_comp_slots + prev_comp;
            prev_busy_end.saturating_sub(cur.arrive_slot)
        }
    };
    let ready = cur.arrive_slot + queue_comp + cur.comp_slots;
    if start < ready {
        return Err(CoreError::Domain("transmission started before the data existed"));
    }
    Ok((queue_comp, start - ready))
}
