//! Fading-channel sampling and per-slot gain traces.

use alloc::vec::Vec;

use rand::RngCore;

use crate::error::CoreError;
use crate::math;
use crate::params::SystemParams;

/// One realized channel state: the small-scale power gain `g` and the
/// effective gain `h = ref_gain * g / (noise * d^2)` in 1/W that the rate
/// law consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub gain: f64,
    pub effective: f64,
}

impl ChannelSample {
    /// Folds a small-scale gain into the link budget.
    pub fn from_gain(gain: f64, params: &SystemParams) -> Result<Self, CoreError> {
        if !(gain >= 0.0) {
            return Err(CoreError::Domain("small-scale gain must be non-negative"));
        }
        Ok(ChannelSample { gain, effective: gain * params.mean_effective_gain() })
    }
}

/// Source of i.i.d. per-slot small-scale power gains.
///
/// The distribution is deliberately pluggable; the default is Rayleigh
/// fading, i.e. an exponential power gain with unit mean.
pub trait GainSampler {
    fn sample_gain(&self, rng: &mut dyn RngCore) -> f64;
}

/// Rayleigh fading: power gain `g ~ Exp(1)` via inverse transform.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayleighGain;

impl GainSampler for RayleighGain {
    fn sample_gain(&self, rng: &mut dyn RngCore) -> f64 {
        // u in [0, 1); 1 - u in (0, 1], so the log argument never hits zero.
        let u = rand::Rng::gen::<f64>(rng);
        let g = -math::ln(1.0 - u);
        g.max(f64::MIN_POSITIVE)
    }
}

/// Zero-variance channel: every slot realizes the same gain. Used by the
/// deterministic baselines and by tests that need a degenerate sampler.
#[derive(Debug, Clone, Copy)]
pub struct ConstantGain(pub f64);

impl GainSampler for ConstantGain {
    fn sample_gain(&self, _rng: &mut dyn RngCore) -> f64 {
        self.0
    }
}

/// Effective channel gains for one sample path over a planning horizon,
/// one entry per slot starting at `start_slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub start_slot: u32,
    pub gains: Vec<f64>,
}

impl ChannelTrace {
    /// Builds a trace from effective gains, enforcing strict positivity.
    pub fn new(start_slot: u32, gains: Vec<f64>) -> Result<Self, CoreError> {
        if gains.is_empty() {
            return Err(CoreError::Domain("channel trace must cover at least one slot"));
        }
        if gains.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(CoreError::Domain("channel trace gains must be positive and finite"));
        }
        Ok(ChannelTrace { start_slot, gains })
    }

    /// Draws a fresh trace of `len` slots from the sampler.
    pub fn sample(
        sampler: &dyn GainSampler,
        params: &SystemParams,
        start_slot: u32,
        len: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self, CoreError> {
        let scale = params.mean_effective_gain();
        let gains = (0..len)
            .map(|_| (sampler.sample_gain(rng) * scale).max(f64::MIN_POSITIVE))
            .collect();
        ChannelTrace::new(start_slot, gains)
    }

    /// Flat trace at the channel-mean effective gain, used for cheap
    /// planning estimates.
    pub fn mean(params: &SystemParams, start_slot: u32, len: usize) -> Result<Self, CoreError> {
        ChannelTrace::new(start_slot, alloc::vec![params.mean_effective_gain(); len])
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Last slot covered (inclusive).
    pub fn end_slot(&self) -> u32 {
        self.start_slot + self.gains.len() as u32 - 1
    }

    /// Effective gain at an absolute slot index.
    ///
    /// Panics if the slot lies outside the trace; callers are expected to
    /// have sized the trace over their planning horizon.
    #[inline]
    pub fn at(&self, slot: u32) -> f64 {
        self.gains[(slot - self.start_slot) as usize]
    }

    /// Gains for the window `[start, start + len)` as a slice.
    pub fn window(&self, start: u32, len: usize) -> &[f64] {
        let off = (start - self.start_slot) as usize;
        &self.gains[off..off + len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn effective_gain_is_deterministic_in_g_and_params() {
        let params = SystemParams::default();
        let s = ChannelSample::from_gain(2.0, &params).unwrap();
        assert_eq!(s.effective, 2.0 * params.mean_effective_gain());
        assert!(ChannelSample::from_gain(-1.0, &params).is_err());
    }

    #[test]
    fn rayleigh_gains_have_unit_mean_roughly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sampler = RayleighGain;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sampler.sample_gain(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "sample mean {mean} far from 1");
    }

    #[test]
    fn traces_reject_non_positive_gains() {
        assert!(ChannelTrace::new(0, alloc::vec![1.0, 0.0]).is_err());
        assert!(ChannelTrace::new(0, alloc::vec![]).is_err());
    }

    #[test]
    fn sampled_trace_is_strictly_positive_and_seeded() {
        let params = SystemParams::default();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let ta = ChannelTrace::sample(&RayleighGain, &params, 5, 64, &mut a).unwrap();
        let tb = ChannelTrace::sample(&RayleighGain, &params, 5, 64, &mut b).unwrap();
        assert_eq!(ta, tb);
        assert!(ta.gains.iter().all(|&h| h > 0.0));
        assert_eq!(ta.end_slot(), 68);
    }

    #[test]
    fn window_slices_relative_to_start() {
        let t = ChannelTrace::new(10, alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.window(11, 2), &[2.0, 3.0]);
        assert_eq!(t.at(13), 4.0);
    }
}
