//! Physical and model constants for one UAV/server link.

use crate::error::CoreError;

/// Every constant of the system model: channel, solar, compute, traffic,
/// battery and task limits.
///
/// All fields are stored in linear SI units. The text configuration layer
/// converts dB/dBm fields on load; see the companion crate.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Channel bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Slot duration in seconds. Shorter than the channel coherence time,
    /// so the gain is constant within a slot.
    pub slot_s: f64,
    /// UAV-to-server distance in meters (fixed; no mobility model).
    pub distance_m: f64,
    /// Receiver noise power in Watts (linear, from dBm).
    pub noise_w: f64,
    /// Channel power at the reference distance (linear, from dB).
    pub ref_gain: f64,
    /// Per-slot transmit power cap in Watts.
    pub p_max_w: f64,
    /// Task completion threshold in slots: a task arriving at slot `a` must
    /// finish before slot `a + deadline_slots`.
    pub deadline_slots: u32,
    /// Raw sample size in bits (the DT payload).
    pub raw_bits: f64,
    /// Feature-map height in elements.
    pub feat_h: u32,
    /// Feature-map width in elements.
    pub feat_w: u32,
    /// Quantization depth per feature-map element in bits.
    pub quant_bits: u32,
    /// Battery capacity in Joules.
    pub batt_cap_j: f64,
    /// Initial battery level in Joules.
    pub batt_init_j: f64,
    /// Probability that a new task arrives in a given slot.
    pub arrival_prob: f64,
    /// Solar harvesting efficiency (dimensionless).
    pub solar_eff: f64,
    /// Equivalent solar panel area in m².
    pub panel_area_m2: f64,
    /// Average solar radiation intensity in W/m².
    pub irradiance_wm2: f64,
    /// Cloud absorption coefficient in 1/m.
    pub absorb_per_m: f64,
    /// Cloud thickness in meters.
    pub cloud_thickness_m: f64,
    /// Chip-architecture coefficient of the cubic compute-power model, in
    /// J·s².
    pub chip_k: f64,
    /// Maximum device compute speed in Hz.
    pub f_max_hz: f64,
    /// Floating-point operations needed to produce one feature map.
    pub flops: f64,
    /// Number of CPU cores.
    pub cores: u32,
    /// Bits of vector operation per cycle.
    pub vec_bits: u32,
    /// Operating-system word size in bits.
    pub os_bits: u32,
}

impl SystemParams {
    /// Checks the type invariants: non-negative physical quantities,
    /// probabilities in range, and the battery bounds.
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(CoreError::InvalidConfig("bandwidth must be positive"));
        }
        if !(self.slot_s > 0.0) {
            return Err(CoreError::InvalidConfig("slot duration must be positive"));
        }
        if !(self.distance_m > 0.0) {
            return Err(CoreError::InvalidConfig("distance must be positive"));
        }
        if !(self.noise_w > 0.0) {
            return Err(CoreError::InvalidConfig("noise power must be positive"));
        }
        if !(self.ref_gain > 0.0) {
            return Err(CoreError::InvalidConfig("reference gain must be positive"));
        }
        if !(self.p_max_w > 0.0) {
            return Err(CoreError::InvalidConfig("p_max must be positive"));
        }
        if self.deadline_slots < 1 {
            return Err(CoreError::InvalidConfig("deadline must be at least one slot"));
        }
        if !(self.raw_bits > 0.0) {
            return Err(CoreError::InvalidConfig("raw data size must be positive"));
        }
        if self.feat_h == 0 || self.feat_w == 0 || self.quant_bits == 0 {
            return Err(CoreError::InvalidConfig("feature-map dimensions must be positive"));
        }
        if !(self.batt_cap_j >= 0.0) || !(self.batt_init_j >= 0.0) {
            return Err(CoreError::InvalidConfig("battery levels must be non-negative"));
        }
        if self.batt_init_j > self.batt_cap_j {
            return Err(CoreError::InvalidConfig("initial battery exceeds capacity"));
        }
        if !(0.0..=1.0).contains(&self.arrival_prob) {
            return Err(CoreError::InvalidConfig("arrival probability must lie in [0, 1]"));
        }
        if !(self.solar_eff >= 0.0)
            || !(self.panel_area_m2 >= 0.0)
            || !(self.irradiance_wm2 >= 0.0)
        {
            return Err(CoreError::InvalidConfig("solar parameters must be non-negative"));
        }
        if !(self.absorb_per_m >= 0.0) || !(self.cloud_thickness_m >= 0.0) {
            return Err(CoreError::InvalidConfig("cloud parameters must be non-negative"));
        }
        if !(self.chip_k >= 0.0) {
            return Err(CoreError::InvalidConfig("chip coefficient must be non-negative"));
        }
        if !(self.f_max_hz > 0.0) {
            return Err(CoreError::InvalidConfig("f_max must be positive"));
        }
        if !(self.flops > 0.0) {
            return Err(CoreError::InvalidConfig("flop count must be positive"));
        }
        if self.cores == 0 || self.vec_bits == 0 || self.os_bits == 0 {
            return Err(CoreError::InvalidConfig("compute pipeline widths must be positive"));
        }
        Ok(())
    }

    /// Feature-map payload in bits (the CT payload).
    #[inline]
    pub fn feat_bits(&self) -> f64 {
        self.feat_h as f64 * self.feat_w as f64 * self.quant_bits as f64
    }

    /// Mean effective channel gain in 1/W: the reference gain over noise and
    /// squared distance, for a unit-mean small-scale fade.
    #[inline]
    pub fn mean_effective_gain(&self) -> f64 {
        self.ref_gain / (self.noise_w * self.distance_m * self.distance_m)
    }

    /// Bits one slot carries per unit of spectral efficiency.
    #[inline]
    pub fn slot_bandwidth_bits(&self) -> f64 {
        self.slot_s * self.bandwidth_hz
    }
}

impl Default for SystemParams {
    /// Desk-scale defaults. Channel constants (distance, slot length, noise,
    /// reference gain, bandwidth) follow the usual narrow-band UAV link
    /// setup; the free parameters are sized so that task load genuinely
    /// contends for the channel.
    fn default() -> Self {
        SystemParams {
            bandwidth_hz: 2.0e6,
            slot_s: 0.1,
            distance_m: 100.0,
            noise_w: 1.0e-14,  // -110 dBm
            ref_gain: 1.0e-6,  // -60 dB
            p_max_w: 4.0e-6,
            deadline_slots: 30,
            raw_bits: 20_000.0,
            feat_h: 32,
            feat_w: 32,
            quant_bits: 20,
            batt_cap_j: 50.0,
            batt_init_j: 25.0,
            arrival_prob: 0.2,
            solar_eff: 0.05,
            panel_area_m2: 0.01,
            irradiance_wm2: 1000.0,
            absorb_per_m: 0.1,
            cloud_thickness_m: 10.0,
            chip_k: 1.0e-32,
            f_max_hz: 1.0e9,
            flops: 2.4e9,
            cores: 4,
            vec_bits: 256,
            os_bits: 64,
        }
    }
}
