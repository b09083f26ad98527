//! Capped water-filling for one task's transmission window.
//!
//! Minimizes the power sum over the window subject to the rate constraint
//! `tau * sum_t W log2(1 + p_t h_t) >= payload` and the per-slot box
//! `0 <= p_t <= p_max`. The interior solution has the water-filling form
//! `p_t = nu - 1/h_t` with a single water level `nu`; box violations are
//! repaired by freezing clipped slots and redistributing the residual
//! payload, which converges in at most one pass per slot.
//!
//! All internal arithmetic runs in nats with the natural-log bandwidth
//! `W / ln 2`, so the closed form is exact and the bit-domain rate law is
//! reproduced at the interface.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;

/// Result of the single-task power solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    /// Per-slot powers over the window, in Watts.
    pub powers_w: Vec<f64>,
    /// Final water level; `None` when every slot ended clipped.
    pub water_level: Option<f64>,
    /// False when even all slots at `p_max` cannot carry the payload; the
    /// powers are then the all-`p_max` schedule.
    pub feasible: bool,
}

impl Waterfill {
    pub fn energy_j(&self, slot_s: f64) -> f64 {
        schedule_energy(&self.powers_w, slot_s)
    }
}

/// Total energy of a power schedule: `tau * sum_t p_t`.
pub fn schedule_energy(powers_w: &[f64], slot_s: f64) -> f64 {
    slot_s * powers_w.iter().sum::<f64>()
}

/// Outcome of one workspace solve; powers live in the workspace buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct WfOutcome {
    pub feasible: bool,
    pub water_level: Option<f64>,
    pub energy_j: f64,
}

const ACTIVE: u8 = 0;
const DRY: u8 = 1;
const SATURATED: u8 = 2;

/// Reusable buffers for the water-filling iteration. The search loops of
/// the window allocator evaluate thousands of candidate windows per solve;
/// routing them through one workspace keeps those inner loops free of heap
/// traffic.
#[derive(Debug, Default)]
pub(crate) struct WfWorkspace {
    pub powers: Vec<f64>,
    ln_h: Vec<f64>,
    state: Vec<u8>,
}

impl WfWorkspace {
    pub fn new() -> Self {
        WfWorkspace::default()
    }

    /// Capped water-filling over the window. Preconditions (positive
    /// payload, positive gains, non-empty window) are the caller's
    /// responsibility; the public wrapper checks them.
    pub fn solve(
        &mut self,
        payload_bits: f64,
        window_gains: &[f64],
        p_max_w: f64,
        slot_s: f64,
        bandwidth_hz: f64,
    ) -> WfOutcome {
        self.ln_h.clear();
        self.ln_h.extend(window_gains.iter().map(|&h| math::ln(h)));
        self.solve_inner(payload_bits, window_gains, p_max_w, slot_s, bandwidth_hz)
    }

    /// [`WfWorkspace::solve`] with the window's `ln h` values precomputed by
    /// the caller (the allocator caches them for the whole trace).
    pub fn solve_with_ln(
        &mut self,
        payload_bits: f64,
        window_gains: &[f64],
        window_ln_gains: &[f64],
        p_max_w: f64,
        slot_s: f64,
        bandwidth_hz: f64,
    ) -> WfOutcome {
        debug_assert_eq!(window_gains.len(), window_ln_gains.len());
        self.ln_h.clear();
        self.ln_h.extend_from_slice(window_ln_gains);
        self.solve_inner(payload_bits, window_gains, p_max_w, slot_s, bandwidth_hz)
    }

    fn solve_inner(
        &mut self,
        payload_bits: f64,
        window_gains: &[f64],
        p_max_w: f64,
        slot_s: f64,
        bandwidth_hz: f64,
    ) -> WfOutcome {
        let n = window_gains.len();
        debug_assert!(n > 0 && payload_bits > 0.0);
        let tw = slot_s * bandwidth_hz / core::f64::consts::LN_2;

        self.powers.clear();
        self.powers.resize(n, 0.0);
        self.state.clear();
        self.state.resize(n, ACTIVE);

        let mut residual = payload_bits;

        // Each outer pass permanently saturates at least one slot, so the
        // loop runs at most n+1 times.
        for _ in 0..=n {
            // Unconstrained water level over the active set, drying slots
            // the level leaves unwetted. At least one slot always survives:
            // a level that wets no slot would deliver nothing,
            // contradicting residual > 0.
            let mut nu;
            loop {
                let mut count = 0usize;
                let mut sum_ln = 0.0;
                for i in 0..n {
                    if self.state[i] == ACTIVE {
                        count += 1;
                        sum_ln += self.ln_h[i];
                    }
                }
                if count == 0 {
                    nu = 0.0;
                    break;
                }
                nu = math::exp((residual / tw - sum_ln) / count as f64);
                let mut dried = false;
                for i in 0..n {
                    if self.state[i] == ACTIVE && !(nu * window_gains[i] > 1.0) {
                        self.state[i] = DRY;
                        dried = true;
                    }
                }
                if !dried {
                    break;
                }
            }
            if nu == 0.0 {
                break;
            }

            let mut clipped = false;
            for i in 0..n {
                if self.state[i] == ACTIVE && nu - 1.0 / window_gains[i] > p_max_w {
                    self.state[i] = SATURATED;
                    residual -= tw * math::ln(1.0 + p_max_w * window_gains[i]);
                    clipped = true;
                }
            }
            if !clipped {
                for i in 0..n {
                    self.powers[i] = match self.state[i] {
                        SATURATED => p_max_w,
                        ACTIVE => nu - 1.0 / window_gains[i],
                        _ => 0.0,
                    };
                }
                return self.outcome(slot_s, Some(nu), true);
            }
            if residual <= 0.0 {
                // Numerical edge: the freshly saturated slots already cover
                // the payload. Everything else idles.
                for i in 0..n {
                    self.powers[i] = if self.state[i] == SATURATED { p_max_w } else { 0.0 };
                }
                return self.outcome(slot_s, None, true);
            }
            // Drying was relative to a stale level; saturation only raises
            // it, so re-admit dried slots for the next pass.
            for s in self.state.iter_mut() {
                if *s == DRY {
                    *s = ACTIVE;
                }
            }
        }

        for p in self.powers.iter_mut() {
            *p = p_max_w;
        }
        self.outcome(slot_s, None, false)
    }

    fn outcome(&self, slot_s: f64, water_level: Option<f64>, feasible: bool) -> WfOutcome {
        WfOutcome { feasible, water_level, energy_j: schedule_energy(&self.powers, slot_s) }
    }
}

/// Minimal-energy powers delivering `payload_bits` over the window whose
/// per-slot effective gains are `window_gains`.
///
/// The window occupies exactly `window_gains.len()` slots. Returns the
/// all-`p_max` schedule flagged infeasible when the payload exceeds the
/// window's capacity at the cap.
pub fn optimal_power_single_task(
    payload_bits: f64,
    window_gains: &[f64],
    p_max_w: f64,
    slot_s: f64,
    bandwidth_hz: f64,
) -> Result<Waterfill, CoreError> {
    if window_gains.is_empty() {
        return Err(CoreError::Domain("transmission window must cover at least one slot"));
    }
    if !(payload_bits > 0.0) {
        return Err(CoreError::Domain("payload must be positive"));
    }
    if !(p_max_w > 0.0) || !(slot_s > 0.0) || !(bandwidth_hz > 0.0) {
        return Err(CoreError::Domain("p_max, slot length and bandwidth must be positive"));
    }
    if window_gains.iter().any(|&h| !(h > 0.0)) {
        return Err(CoreError::Domain("window gains must be positive"));
    }
    let mut ws = WfWorkspace::new();
    let out = ws.solve(payload_bits, window_gains, p_max_w, slot_s, bandwidth_hz);
    Ok(Waterfill {
        powers_w: ws.powers.clone(),
        water_level: out.water_level,
        feasible: out.feasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rate_unchecked;

    const TAU: f64 = 0.1;
    const W: f64 = 2.0e6;

    fn delivered(powers: &[f64], gains: &[f64]) -> f64 {
        powers.iter().zip(gains).map(|(&p, &h)| TAU * rate_unchecked(p, h, W)).sum()
    }

    /// Independent route: bisect the water level of the clamped profile
    /// until the delivered bits match the payload.
    fn bisection_oracle(payload: f64, gains: &[f64], p_max: f64) -> Option<Vec<f64>> {
        let profile = |nu: f64| -> Vec<f64> {
            gains.iter().map(|&h| (nu - 1.0 / h).clamp(0.0, p_max)).collect()
        };
        let rate_of = |nu: f64| delivered(&profile(nu), gains);
        let hi_cap = gains.iter().map(|&h| p_max + 1.0 / h).fold(0.0, f64::max);
        if rate_of(hi_cap) < payload {
            return None;
        }
        let (mut lo, mut hi) = (0.0, hi_cap);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate_of(mid) >= payload {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(profile(hi))
    }

    #[test]
    fn single_slot_closed_form() {
        // One slot, payload = tau*W bits, unit gain: p = 2^1 - 1 = 1 W.
        let wf = optimal_power_single_task(TAU * W, &[1.0], 10.0, TAU, W).unwrap();
        assert!(wf.feasible);
        assert!((wf.powers_w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_channel_gives_uniform_power() {
        let h = 1.3e4;
        let gains = [h; 5];
        let payload = 40_000.0;
        let wf = optimal_power_single_task(payload, &gains, 1.0, TAU, W).unwrap();
        let expected = (crate::math::exp2(payload / (TAU * W * 5.0)) - 1.0) / h;
        for &p in &wf.powers_w {
            assert!((p - expected).abs() / expected < 1e-12);
        }
    }

    #[test]
    fn unclipped_solution_matches_bisection_and_is_tight() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(2..=4);
            let gains: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5e4..3.0e4)).collect();
            let payload = rng.gen_range(10_000.0..60_000.0) * n as f64;
            let wf = optimal_power_single_task(payload, &gains, 1.0e9, TAU, W).unwrap();
            assert!(wf.feasible);
            let oracle = bisection_oracle(payload, &gains, 1.0e9).unwrap();
            for (a, b) in wf.powers_w.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} vs {b}");
            }
            let got = delivered(&wf.powers_w, &gains);
            assert!((got - payload).abs() / payload < 1e-9, "rate not tight: {got} vs {payload}");
        }
    }

    #[test]
    fn water_level_constant_on_unclipped_slots() {
        let gains = [2.0e4, 1.5e4, 0.9e4, 2.6e4];
        let wf = optimal_power_single_task(220_000.0, &gains, 1.0e9, TAU, W).unwrap();
        let nu = wf.water_level.unwrap();
        for (p, h) in wf.powers_w.iter().zip(&gains) {
            if *p > 0.0 {
                assert!((p + 1.0 / h - nu).abs() / nu < 1e-9);
            }
        }
    }

    #[test]
    fn clipping_freezes_at_p_max_and_stays_tight() {
        let gains = [5.0e4, 1.0e3, 9.0e2];
        let p_max = 1.0e-4;
        // Payload sized so the strong slot saturates but the window copes.
        let cap: f64 = gains.iter().map(|&h| TAU * rate_unchecked(p_max, h, W)).sum();
        let payload = 0.9 * cap;
        let wf = optimal_power_single_task(payload, &gains, p_max, TAU, W).unwrap();
        assert!(wf.feasible);
        assert!(wf.powers_w.iter().all(|&p| p <= p_max + 1e-18 && p >= 0.0));
        let got = delivered(&wf.powers_w, &gains);
        assert!((got - payload).abs() / payload < 1e-9);
        let oracle = bisection_oracle(payload, &gains, p_max).unwrap();
        let e_impl = schedule_energy(&wf.powers_w, TAU);
        let e_oracle = schedule_energy(&oracle, TAU);
        assert!((e_impl - e_oracle).abs() / e_oracle < 1e-6);
    }

    #[test]
    fn dried_slots_can_reactivate_after_saturation() {
        // A strong slot saturates; the residual then needs the weak slots
        // the first pass left dry. Feasibility requires re-admitting them.
        let gains = [1.0e5, 1.0e3, 1.0e3, 1.0e3];
        let p_max = 2.0e-4;
        let cap: f64 = gains.iter().map(|&h| TAU * rate_unchecked(p_max, h, W)).sum();
        let payload = 0.95 * cap;
        let wf = optimal_power_single_task(payload, &gains, p_max, TAU, W).unwrap();
        assert!(wf.feasible, "payload below capacity must stay feasible");
        let got = delivered(&wf.powers_w, &gains);
        assert!((got - payload).abs() / payload < 1e-9);
        let oracle = bisection_oracle(payload, &gains, p_max).unwrap();
        let e_impl = schedule_energy(&wf.powers_w, TAU);
        let e_oracle = schedule_energy(&oracle, TAU);
        assert!((e_impl - e_oracle).abs() / e_oracle < 1e-6);
    }

    #[test]
    fn impossible_payload_returns_all_pmax_flagged() {
        let gains = [1.0e3, 1.2e3];
        let p_max = 1.0e-5;
        let cap: f64 = gains.iter().map(|&h| TAU * rate_unchecked(p_max, h, W)).sum();
        let wf = optimal_power_single_task(cap * 3.0, &gains, p_max, TAU, W).unwrap();
        assert!(!wf.feasible);
        assert!(wf.powers_w.iter().all(|&p| p == p_max));
    }

    #[test]
    fn domain_errors() {
        assert!(optimal_power_single_task(1.0, &[], 1.0, TAU, W).is_err());
        assert!(optimal_power_single_task(0.0, &[1.0], 1.0, TAU, W).is_err());
        assert!(optimal_power_single_task(-5.0, &[1.0], 1.0, TAU, W).is_err());
        assert!(optimal_power_single_task(1.0, &[0.0], 1.0, TAU, W).is_err());
    }

    #[test]
    fn schedule_energy_examples() {
        assert_eq!(schedule_energy(&[0.0, 0.0], 0.1), 0.0);
        assert!((schedule_energy(&[1.0, 2.0, 3.0], 0.1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn workspace_energy_matches_public_op() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut ws = WfWorkspace::new();
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let gains: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0e2..5.0e4)).collect();
            let payload = rng.gen_range(100.0..50_000.0);
            let p_max = rng.gen_range(1.0e-6..1.0e-4);
            let out = ws.solve(payload, &gains, p_max, TAU, W);
            let wf = optimal_power_single_task(payload, &gains, p_max, TAU, W).unwrap();
            assert_eq!(out.feasible, wf.feasible);
            assert_eq!(out.energy_j, wf.energy_j(TAU));
            assert_eq!(ws.powers, wf.powers_w);
        }
    }

    #[test]
    fn optimal_energy_beats_uniform_feasible_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let gains: Vec<f64> = (0..4).map(|_| rng.gen_range(0.3e4..3.0e4)).collect();
            let payload = rng.gen_range(100_000.0..300_000.0);
            let wf = optimal_power_single_task(payload, &gains, 1.0e9, TAU, W).unwrap();
            // Uniform power delivering the payload, found by bisection on p.
            let (mut lo, mut hi) = (0.0, 1.0e9);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if delivered(&alloc::vec![mid; 4], &gains) >= payload {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let uniform_energy = schedule_energy(&alloc::vec![hi; 4], TAU);
            assert!(wf.energy_j(TAU) <= uniform_energy * (1.0 + 1e-9));
        }
    }
}
