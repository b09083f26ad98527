//! Property tests for the model laws and optimizer invariants.

use opetrl_core::channel::{ChannelTrace, RayleighGain};
use opetrl_core::model;
use opetrl_core::params::SystemParams;
use opetrl_core::power::{
    allocate_times, default_loop_cap, optimal_power_single_task, restore_power, schedule_energy,
    PowerSchedule, TxRequest,
};
use opetrl_core::sim::{run_episode, Policy, SimConfig};
use opetrl_core::task::Mode;
use proptest::prelude::*;

const TAU: f64 = 0.1;
const BW: f64 = 2.0e6;

fn delivered(powers: &[f64], gains: &[f64]) -> f64 {
    powers
        .iter()
        .zip(gains)
        .map(|(&p, &h)| TAU * BW * (1.0 + p * h).log2())
        .sum()
}

proptest! {
    #[test]
    fn rate_is_strictly_increasing_in_power(
        p in 0.0..1.0e-3f64,
        dp in 1.0e-9..1.0e-4f64,
        h in 1.0e2..1.0e5f64,
    ) {
        let lo = model::achievable_rate(p, h, BW).unwrap();
        let hi = model::achievable_rate(p + dp, h, BW).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn compute_energy_is_cubic_power_times_time(f in 1.0e7..2.0e9f64) {
        let params = SystemParams::default();
        let energy = model::compute_energy(f, &params);
        let p_c = params.chip_k * f * f * f;
        let t = model::compute_time(f, &params).unwrap();
        prop_assert!((energy - p_c * t).abs() <= 1e-12 * energy.max(1e-300));
    }

    #[test]
    fn ct_payload_below_dt_payload_in_the_studied_regime(
        feat_h in 1u32..=32,
        feat_w in 1u32..=32,
        quant in 1u32..=16,
        raw in 1.0e4..1.0e5f64,
    ) {
        let params = SystemParams {
            feat_h,
            feat_w,
            quant_bits: quant,
            raw_bits: raw,
            ..Default::default()
        };
        prop_assume!(params.feat_bits() < params.raw_bits);
        prop_assert!(
            model::task_payload(Mode::Ct, &params) < model::task_payload(Mode::Dt, &params)
        );
    }

    #[test]
    fn unclipped_optimum_is_rate_tight_and_level_flat(seed in 0u64..4096) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let gains: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3e4..3.0e4)).collect();
        let quarter: Vec<f64> = vec![2.5e-5; n];
        let payload = delivered(&quarter, &gains) * rng.gen_range(0.3..0.9);
        prop_assume!(payload > 1.0);
        let wf = optimal_power_single_task(payload, &gains, 1.0e-4, TAU, BW).unwrap();
        prop_assume!(wf.feasible && wf.powers_w.iter().all(|&p| p > 0.0 && p < 1.0e-4));
        // Rate constraint tight.
        let got = delivered(&wf.powers_w, &gains);
        prop_assert!((got - payload).abs() / payload <= 1e-9);
        // Water-filling structure: p + 1/h constant across active slots.
        let nu = wf.water_level.unwrap();
        for (p, h) in wf.powers_w.iter().zip(&gains) {
            prop_assert!((p + 1.0 / h - nu).abs() / nu <= 1e-9);
        }
    }

    #[test]
    fn optimal_energy_never_rises_with_longer_windows(seed in 0u64..1024) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p_max = 4.0e-6;
        let gains: Vec<f64> = (0..8)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                (-(1.0 - u).ln()).max(1e-12) * 1.0e4
            })
            .collect();
        let payload = delivered(&[p_max], &gains[..1]) * rng.gen_range(0.2..0.9);
        prop_assume!(payload > 1.0);
        let mut prev = f64::INFINITY;
        for t in 1..=8usize {
            let wf = optimal_power_single_task(payload, &gains[..t], p_max, TAU, BW).unwrap();
            prop_assert!(wf.feasible);
            let e = wf.energy_j(TAU);
            prop_assert!(e <= prev + 1e-12, "energy rose from {prev} to {e} at window {t}");
            prev = e;
        }
    }

    #[test]
    fn restoration_is_a_per_slot_mean_within_bounds(
        seed in 0u64..1024,
        k in 1usize..6,
        n in 1usize..8,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p_max = 1.0e-5;
        let schedules: Vec<PowerSchedule> = (0..k)
            .map(|_| PowerSchedule {
                start_slot: 3,
                powers_w: (0..n).map(|_| rng.gen_range(0.0..2.0 * p_max)).collect(),
                feasible: true,
            })
            .collect();
        let restored = restore_power(&schedules, p_max).unwrap();
        for t in 0..n {
            let mean =
                schedules.iter().map(|s| s.powers_w[t]).sum::<f64>() / k as f64;
            prop_assert!((restored.powers_w[t] - mean.clamp(0.0, p_max)).abs() < 1e-18);
            let lo = schedules.iter().map(|s| s.powers_w[t]).fold(f64::INFINITY, f64::min);
            let hi = schedules.iter().map(|s| s.powers_w[t]).fold(0.0f64, f64::max);
            prop_assert!(restored.powers_w[t] >= lo.min(p_max) - 1e-18);
            prop_assert!(restored.powers_w[t] <= hi + 1e-18);
        }
    }

    #[test]
    fn allocation_windows_respect_all_invariants(seed in 0u64..512) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p_max = 4.0e-6;
        let k = rng.gen_range(1..=4usize);
        let horizon = rng.gen_range(12..=30u32);
        let gains: Vec<f64> = (0..horizon).map(|_| rng.gen_range(0.1e4..3.0e4)).collect();
        let trace = ChannelTrace::new(0, gains).unwrap();
        let mut requests = Vec::new();
        let mut arrive = 0u32;
        for i in 0..k {
            let deadline = if i == k - 1 {
                horizon
            } else {
                (arrive + rng.gen_range(4..=8)).min(horizon)
            };
            prop_assume!(deadline > arrive + 1);
            requests.push(TxRequest {
                id: i,
                ready_slot: arrive,
                deadline_slot: deadline,
                payload_bits: rng.gen_range(1_000.0..20_000.0),
            });
            arrive += rng.gen_range(1..=4);
        }
        prop_assume!(requests.last().unwrap().deadline_slot == horizon);
        let alloc =
            match allocate_times(&requests, &trace, 0, p_max, TAU, BW, default_loop_cap(horizon)) {
                Ok(a) => a,
                Err(_) => return Ok(()),
            };
        prop_assert!(alloc.validate(&requests, 0).is_ok());
        // Windows concatenate into a schedule whose energy is the window sum.
        let mut concat = vec![0.0; horizon as usize];
        let mut total = 0.0;
        for (e, q) in alloc.entries.iter().zip(&requests) {
            let wf = optimal_power_single_task(
                q.payload_bits,
                trace.window(e.start_slot, e.len_slots as usize),
                p_max,
                TAU,
                BW,
            )
            .unwrap();
            for (j, &p) in wf.powers_w.iter().enumerate() {
                concat[(e.start_slot + j as u32) as usize] = p;
            }
            total += wf.energy_j(TAU);
        }
        prop_assert!((schedule_energy(&concat, TAU) - total).abs() <= 1e-15);
    }

    #[test]
    fn episodes_respect_battery_power_and_causality(seed in 0u64..24) {
        let mut cfg = SimConfig { horizon_slots: 250, ..Default::default() };
        cfg.saa.k_samples = Some(6);
        for policy in [Policy::OneTask, Policy::Greedy] {
            cfg.policy = policy;
            let out = run_episode(&cfg, &RayleighGain, None, 0.0, false, seed).unwrap();
            for s in &out.trace.slots {
                prop_assert!(s.battery_j >= 0.0 && s.battery_j <= cfg.system.batt_cap_j);
                prop_assert!(s.power_w <= cfg.system.p_max_w * (1.0 + 1e-12));
            }
            for t in &out.trace.tasks {
                if let Some(start) = t.start_slot {
                    prop_assert!(start >= t.ready_slot);
                    prop_assert!(start >= t.arrive_slot);
                }
                if t.met {
                    let finish = t.finish_slot.unwrap();
                    prop_assert!(finish < t.arrive_slot + cfg.system.deadline_slots);
                    prop_assert!(t.delivered_bits >= t.payload_bits - 1e-6);
                }
            }
        }
    }
}
