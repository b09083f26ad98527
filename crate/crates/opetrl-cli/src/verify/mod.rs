//! The self-check registry: every module's invariants behind one list, so
//! the `verify` subcommand and the acceptance suite cannot silently drop a
//! check. Each check is a fast, seeded instance of the corresponding
//! acceptance-scale property.

pub mod oracles;

use opetrl_core::agent::{self, DdqnAgent, QNetwork, ReplayBuffer, Transition};
use opetrl_core::channel::{ChannelTrace, RayleighGain};
use opetrl_core::params::SystemParams;
use opetrl_core::power::{
    allocate_times, default_loop_cap, optimal_power_single_task, restore_power, saa_sample_count,
    schedule_energy, PowerSchedule, SaaConfig, SaaFormula, TxRequest,
};
use opetrl_core::sim::{run_episode, Policy, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oracles::{BW, TAU};

pub struct CheckResult {
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(passed: bool, detail: String) -> Self {
        CheckResult { passed, detail }
    }
}

pub struct Check {
    pub name: &'static str,
    pub run: fn(u64) -> CheckResult,
}

/// Every registered check, in report order.
pub fn registry() -> Vec<Check> {
    vec![
        Check { name: "water-filling vs bisection (unclipped)", run: check_bisection },
        Check { name: "water-filling vs projected gradient (clipped)", run: check_projected_gradient },
        Check { name: "oracle cross-check (bisection vs gradient)", run: check_oracle_cross },
        Check { name: "oracle sensitivity to a wrong water level", run: check_oracle_sensitivity },
        Check { name: "rate constraint tight on unclipped optima", run: check_rate_tightness },
        Check { name: "optimal energy non-increasing in window", run: check_energy_monotone },
        Check { name: "window allocation vs exhaustive enumeration", run: check_allocation_bruteforce },
        Check { name: "allocation is single-move stable", run: check_allocation_local_optimality },
        Check { name: "sample-count bound fixtures", run: check_saa_fixtures },
        Check { name: "consensus restoration stays within copies", run: check_restoration_bounds },
        Check { name: "chance constraint holds on fresh traces", run: check_chance_constraint },
        Check { name: "training gradients vs finite differences", run: check_gradients },
        Check { name: "double-Q target uses online argmax", run: check_double_q },
        Check { name: "training loss decreases on a fixed batch", run: check_loss_decreases },
        Check { name: "replay memory ring semantics", run: check_replay_ring },
        Check { name: "checkpoint encode/decode round trip", run: check_checkpoint },
        Check { name: "battery and causality hold on episodes", run: check_episode_invariants },
        Check { name: "episodes reproduce bit-for-bit", run: check_determinism },
    ]
}

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opetrl_core::seeding::derive_seed(seed, tag))
}

/// Max relative per-slot deviation between the closed form and the
/// bisection oracle over unclipped instances. Exposed for the acceptance
/// suite, which runs it at full scale.
pub fn bisection_deviation(instances: usize, max_window: usize, seed: u64) -> f64 {
    let p_max = 1.0e-4;
    let mut r = rng(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (payload, gains) = oracles::random_unclipped_instance(&mut r, max_window, p_max);
        let wf = optimal_power_single_task(payload, &gains, p_max, TAU, BW).unwrap();
        let oracle = oracles::bisection_water_level(payload, &gains, p_max, TAU, BW).unwrap();
        for (a, b) in wf.powers_w.iter().zip(&oracle) {
            let denom = b.abs().max(1e-18);
            worst = worst.max((a - b).abs() / denom);
        }
    }
    worst
}

/// Max relative objective gap between the closed form and the
/// projected-gradient oracle over clipped instances.
pub fn projected_gradient_gap(instances: usize, max_window: usize, seed: u64) -> f64 {
    let p_max = 1.0e-4;
    let mut r = rng(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (payload, gains) = oracles::random_clipped_instance(&mut r, max_window, p_max);
        let wf = optimal_power_single_task(payload, &gains, p_max, TAU, BW).unwrap();
        let pg = oracles::projected_gradient(payload, &gains, p_max, TAU, BW);
        let e_impl = schedule_energy(&wf.powers_w, TAU);
        let e_pg = schedule_energy(&pg, TAU);
        worst = worst.max((e_impl - e_pg).abs() / e_pg.max(1e-30));
    }
    worst
}

/// Max relative rate-constraint slack over unclipped optima.
pub fn rate_tightness_deviation(instances: usize, seed: u64) -> f64 {
    let p_max = 1.0e-4;
    let mut r = rng(seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (payload, gains) = oracles::random_unclipped_instance(&mut r, 6, p_max);
        let wf = optimal_power_single_task(payload, &gains, p_max, TAU, BW).unwrap();
        let got = oracles::delivered_bits(&wf.powers_w, &gains, TAU, BW);
        worst = worst.max((got - payload).abs() / payload);
    }
    worst
}

/// Largest energy increase observed when a window grows by one slot
/// (positive values violate the monotonicity theorem).
pub fn energy_monotonicity_slack(instances: usize, max_window: usize, seed: u64) -> f64 {
    let p_max = 4.0e-6;
    let mut r = rng(seed, 4);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let gains: Vec<f64> = (0..max_window)
            .map(|_| {
                let u: f64 = r.gen_range(0.0..1.0f64);
                (-(1.0 - u).ln()).max(1e-12) * 1.0e4
            })
            .collect();
        // Feasible in a single slot so every window length is feasible.
        let cap1 = oracles::delivered_bits(&[p_max], &gains[..1], TAU, BW);
        let payload = cap1 * r.gen_range(0.2..0.9);
        let mut prev = f64::INFINITY;
        for t in 1..=max_window {
            let wf = optimal_power_single_task(payload, &gains[..t], p_max, TAU, BW).unwrap();
            assert!(wf.feasible);
            let e = wf.energy_j(TAU);
            worst = worst.max(e - prev);
            prev = e;
        }
    }
    worst
}

/// Allocation-vs-enumeration mismatches over random two-task queues.
/// Returns `(cases_with_gap, worst_relative_gap)`.
pub fn allocation_vs_bruteforce(instances: usize, seed: u64, tasks: usize) -> (usize, f64) {
    let p_max = 4.0e-6;
    let mut r = rng(seed, 5);
    let mut gaps = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let horizon = r.gen_range(6..=12u32);
        let gains: Vec<f64> = (0..horizon)
            .map(|_| {
                let u: f64 = r.gen_range(0.0..1.0f64);
                (-(1.0 - u).ln()).max(1e-12) * 1.0e4
            })
            .collect();
        let trace = ChannelTrace::new(0, gains).unwrap();
        let mut requests = Vec::with_capacity(tasks);
        let mut prev_deadline = 0u32;
        for i in 0..tasks {
            let remaining = (tasks - 1 - i) as u32;
            let lo = prev_deadline + 2;
            let hi = horizon - 2 * remaining;
            if lo > hi {
                prev_deadline = lo.min(horizon);
                continue;
            }
            let deadline = if i == tasks - 1 { horizon } else { r.gen_range(lo..=hi) };
            requests.push(TxRequest {
                id: i,
                ready_slot: 0,
                deadline_slot: deadline,
                payload_bits: r.gen_range(500.0..5_000.0),
            });
            prev_deadline = deadline;
        }
        if requests.len() != tasks || requests.last().unwrap().deadline_slot != horizon {
            continue;
        }
        let alloc =
            match allocate_times(&requests, &trace, 0, p_max, TAU, BW, default_loop_cap(horizon)) {
                Ok(a) => a,
                Err(_) => continue,
            };
        let impl_cost: f64 = alloc
            .entries
            .iter()
            .zip(&requests)
            .map(|(e, q)| {
                let wf = optimal_power_single_task(
                    q.payload_bits,
                    trace.window(e.start_slot, e.len_slots as usize),
                    p_max,
                    TAU,
                    BW,
                )
                .unwrap();
                if wf.feasible { wf.energy_j(TAU) } else { p_max * e.len_slots as f64 * TAU }
            })
            .sum();
        let (_, bf_inf, bf_energy) =
            oracles::brute_force_allocation(&requests, &trace, 0, p_max, TAU, BW).unwrap();
        if bf_inf == 0 {
            let gap = (impl_cost - bf_energy) / bf_energy.max(1e-30);
            if gap.abs() > 1e-12 {
                gaps += 1;
                worst = worst.max(gap.abs());
            }
        }
    }
    (gaps, worst)
}

fn check_bisection(seed: u64) -> CheckResult {
    let worst = bisection_deviation(200, 6, seed);
    CheckResult::new(worst <= 1e-9, format!("max per-slot relative deviation {worst:.2e}"))
}

fn check_projected_gradient(seed: u64) -> CheckResult {
    let worst = projected_gradient_gap(40, 5, seed);
    CheckResult::new(worst <= 1e-6, format!("max objective gap {worst:.2e}"))
}

fn check_oracle_cross(seed: u64) -> CheckResult {
    // The two independent oracles must agree with each other on clipped
    // instances, which guards the oracles themselves.
    let p_max = 1.0e-4;
    let mut r = rng(seed, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (payload, gains) = oracles::random_clipped_instance(&mut r, 5, p_max);
        let a = oracles::bisection_water_level(payload, &gains, p_max, TAU, BW).unwrap();
        let b = oracles::projected_gradient(payload, &gains, p_max, TAU, BW);
        let gap = (schedule_energy(&a, TAU) - schedule_energy(&b, TAU)).abs()
            / schedule_energy(&a, TAU);
        worst = worst.max(gap);
    }
    CheckResult::new(worst <= 1e-6, format!("max oracle disagreement {worst:.2e}"))
}

fn check_oracle_sensitivity(seed: u64) -> CheckResult {
    // A deliberately corrupted water level (5% high) must be flagged by the
    // bisection oracle; and the honest tolerance is documented by checking
    // the true deviation is not absurdly small.
    let p_max = 1.0e-4;
    let mut r = rng(seed, 7);
    let (payload, gains) = oracles::random_unclipped_instance(&mut r, 5, p_max);
    let wf = optimal_power_single_task(payload, &gains, p_max, TAU, BW).unwrap();
    let nu = wf.water_level.unwrap();
    let corrupted: Vec<f64> =
        gains.iter().map(|&h| (nu * 1.05 - 1.0 / h).clamp(0.0, p_max)).collect();
    let oracle = oracles::bisection_water_level(payload, &gains, p_max, TAU, BW).unwrap();
    let corrupted_detected = corrupted
        .iter()
        .zip(&oracle)
        .any(|(a, b)| (a - b).abs() / b.abs().max(1e-18) > 1e-9);
    let honest = bisection_deviation(50, 5, seed);
    let real_tolerance_documented = honest > 1e-15;
    CheckResult::new(
        corrupted_detected && real_tolerance_documented,
        format!("corruption detected: {corrupted_detected}; honest deviation {honest:.2e} > 1e-15"),
    )
}

fn check_rate_tightness(seed: u64) -> CheckResult {
    let worst = rate_tightness_deviation(200, seed);
    CheckResult::new(worst <= 1e-9, format!("max relative slack {worst:.2e}"))
}

fn check_energy_monotone(seed: u64) -> CheckResult {
    let worst = energy_monotonicity_slack(200, 8, seed);
    CheckResult::new(worst <= 1e-12, format!("worst energy increase {worst:.2e}"))
}

fn check_allocation_bruteforce(seed: u64) -> CheckResult {
    let (gaps2, worst2) = allocation_vs_bruteforce(100, seed, 2);
    let (gaps3, worst3) = allocation_vs_bruteforce(40, seed ^ 0x33, 3);
    CheckResult::new(
        gaps2 == 0 && gaps3 == 0,
        format!("2-task gaps {gaps2} (worst {worst2:.2e}), 3-task gaps {gaps3} (worst {worst3:.2e})"),
    )
}

fn check_allocation_local_optimality(seed: u64) -> CheckResult {
    // At the returned allocation no single-slot transfer may lower the
    // cost; checked by re-evaluating every neighbour with the public
    // solver.
    let p_max = 4.0e-6;
    let mut r = rng(seed, 8);
    let mut violations = 0usize;
    for _ in 0..30 {
        let horizon = r.gen_range(8..=12u32);
        let gains: Vec<f64> =
            (0..horizon).map(|_| r.gen_range(0.2e4..3.0e4)).collect();
        let trace = ChannelTrace::new(0, gains).unwrap();
        let d0 = r.gen_range(3..=horizon - 3);
        let requests = [
            TxRequest { id: 0, ready_slot: 0, deadline_slot: d0, payload_bits: r.gen_range(500.0..4_000.0) },
            TxRequest { id: 1, ready_slot: 0, deadline_slot: horizon, payload_bits: r.gen_range(500.0..4_000.0) },
        ];
        let alloc = match allocate_times(&requests, &trace, 0, p_max, TAU, BW, default_loop_cap(horizon)) {
            Ok(a) => a,
            Err(_) => continue,
        };
        let energy_of = |lens: [u32; 2]| -> Option<f64> {
            let s0 = 0u32;
            let s1 = s0 + lens[0];
            if lens[0] < 1 || lens[1] < 1 || s0 + lens[0] > d0 || s1 + lens[1] != horizon {
                return None;
            }
            let mut total = 0.0;
            for (q, (s, l)) in requests.iter().zip([(s0, lens[0]), (s1, lens[1])]) {
                let wf = optimal_power_single_task(
                    q.payload_bits,
                    trace.window(s, l as usize),
                    p_max,
                    TAU,
                    BW,
                )
                .unwrap();
                if !wf.feasible {
                    return Some(f64::INFINITY);
                }
                total += wf.energy_j(TAU);
            }
            Some(total)
        };
        let lens = [alloc.entries[0].len_slots, alloc.entries[1].len_slots];
        let here = energy_of(lens).unwrap();
        for (d, r_) in [(0usize, 1usize), (1, 0)] {
            if lens[d] < 2 {
                continue;
            }
            let mut moved = lens;
            moved[d] -= 1;
            moved[r_] += 1;
            if let Some(e) = energy_of(moved) {
                if e < here * (1.0 - 1e-12) {
                    violations += 1;
                }
            }
        }
    }
    CheckResult::new(violations == 0, format!("{violations} improving single moves found"))
}

fn check_saa_fixtures(_seed: u64) -> CheckResult {
    let degenerate = saa_sample_count(0.5, (-1.0f64).exp(), 1, SaaFormula::Printed) == Ok(2);
    let printed = saa_sample_count(0.1, 0.05, 11, SaaFormula::Printed) == Ok(349);
    let corrected = saa_sample_count(0.1, 0.05, 11, SaaFormula::Corrected) == Ok(213);
    let mut monotone = true;
    let mut prev = 0usize;
    for eps in [0.5, 0.25, 0.1, 0.05] {
        let k = saa_sample_count(eps, 0.05, 6, SaaFormula::Printed).unwrap();
        monotone &= k > prev;
        prev = k;
    }
    CheckResult::new(
        degenerate && printed && corrected && monotone,
        format!("N=1:{degenerate} printed:{printed} corrected:{corrected} monotone:{monotone}"),
    )
}

fn check_restoration_bounds(seed: u64) -> CheckResult {
    let mut r = rng(seed, 9);
    let mut ok = true;
    for _ in 0..50 {
        let n = r.gen_range(1..=6);
        let k = r.gen_range(1..=5);
        let schedules: Vec<PowerSchedule> = (0..k)
            .map(|_| PowerSchedule {
                start_slot: 4,
                powers_w: (0..n).map(|_| r.gen_range(0.0..1.0e-5)).collect(),
                feasible: true,
            })
            .collect();
        let restored = restore_power(&schedules, 1.0).unwrap();
        for t in 0..n {
            let lo = schedules.iter().map(|s| s.powers_w[t]).fold(f64::INFINITY, f64::min);
            let hi = schedules.iter().map(|s| s.powers_w[t]).fold(0.0f64, f64::max);
            ok &= restored.powers_w[t] >= lo - 1e-18 && restored.powers_w[t] <= hi + 1e-18;
        }
    }
    // Clamp above the cap.
    let over = PowerSchedule { start_slot: 0, powers_w: vec![3.0], feasible: true };
    let clamped = restore_power(&[over], 1.5).unwrap();
    ok &= clamped.powers_w[0] == 1.5;
    CheckResult::new(ok, "restored powers stay within per-slot copy range".into())
}

fn check_chance_constraint(seed: u64) -> CheckResult {
    let params = SystemParams::default();
    let epsilon = 0.1;
    let (k, violation) = oracles::chance_violation_frequency(&params, epsilon, 0.05, 400, seed);
    CheckResult::new(
        violation <= epsilon + 0.05,
        format!("violation {violation:.4} with K={k} (budget {:.2})", epsilon + 0.05),
    )
}

fn check_gradients(seed: u64) -> CheckResult {
    let worst = oracles::gradient_check(seed);
    CheckResult::new(worst <= 1e-4, format!("max relative gradient error {worst:.2e}"))
}

fn check_double_q(_seed: u64) -> CheckResult {
    let mut online = QNetwork::zeros(2);
    online.set_output_bias([5.0, 0.0]);
    let mut target = QNetwork::zeros(2);
    target.set_output_bias([1.0, 9.0]);
    let y = agent::ddqn_target(0.0, &[0.0, 0.0], &online, &target, 1.0, false).unwrap();
    let single_max = 9.0;
    CheckResult::new(
        y == 1.0 && y != single_max,
        format!("double-Q target {y}, single-network max would be {single_max}"),
    )
}

fn check_loss_decreases(seed: u64) -> CheckResult {
    use opetrl_core::agent::{train_step, AgentConfig};
    let mut r = rng(seed, 10);
    let dim = 5;
    let mut online = QNetwork::xavier(dim, &mut r);
    let target = QNetwork::xavier(dim, &mut r);
    let batch: Vec<Transition> = (0..8)
        .map(|i| Transition {
            state: (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
            action: (i % 2) as usize,
            reward: 0.1 * i as f64,
            next_state: (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect(),
            terminal: true,
        })
        .collect();
    let cfg = AgentConfig { minibatch: 8, learn_rate: 1.0e-2, ..Default::default() };
    let first = train_step(&mut online, &target, &batch, &cfg).unwrap();
    let mut last = first;
    for _ in 0..199 {
        last = train_step(&mut online, &target, &batch, &cfg).unwrap();
    }
    CheckResult::new(last < first, format!("loss {first:.3e} -> {last:.3e} after 200 steps"))
}

fn check_replay_ring(_seed: u64) -> CheckResult {
    let mut buf = ReplayBuffer::new(agent::REPLAY_CAPACITY);
    for i in 0..1500usize {
        buf.push(Transition {
            state: vec![i as f64],
            action: 0,
            reward: 0.0,
            next_state: vec![0.0],
            terminal: false,
        });
    }
    let oldest = buf.iter().map(|t| t.state[0] as usize).min().unwrap();
    let ok = buf.len() == 1000 && oldest == 500;
    CheckResult::new(ok, format!("len {} after 1500 pushes, oldest surviving {oldest}", buf.len()))
}

fn check_checkpoint(seed: u64) -> CheckResult {
    let mut r = rng(seed, 11);
    let net = QNetwork::xavier(17, &mut r);
    let bytes = agent::encode_network(&net);
    let round = agent::decode_network(&bytes) == Ok(net);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let rejects = agent::decode_network(&bad).is_err();
    CheckResult::new(round && rejects, format!("round trip {round}, bad magic rejected {rejects}"))
}

fn check_episode_invariants(seed: u64) -> CheckResult {
    let mut cfg = SimConfig { horizon_slots: 300, ..Default::default() };
    cfg.saa = SaaConfig { k_samples: Some(8), ..Default::default() };
    let mut violations = 0usize;
    for policy in Policy::all() {
        cfg.policy = policy;
        for ep in 0..3u64 {
            let mut r = rng(seed, 12 + ep);
            let mut agent = DdqnAgent::new(cfg.agent.clone(), &cfg.system, &mut r).unwrap();
            let agent_opt = (policy == Policy::Opetrl).then_some(&mut agent);
            let out = run_episode(&cfg, &RayleighGain, agent_opt, 0.1, false, seed ^ ep).unwrap();
            for s in &out.trace.slots {
                if s.battery_j < 0.0 || s.battery_j > cfg.system.batt_cap_j {
                    violations += 1;
                }
                if s.power_w > cfg.system.p_max_w + 1e-15 {
                    violations += 1;
                }
            }
            for t in &out.trace.tasks {
                if let Some(start) = t.start_slot {
                    if start < t.ready_slot {
                        violations += 1;
                    }
                }
            }
        }
    }
    CheckResult::new(violations == 0, format!("{violations} invariant violations"))
}

fn check_determinism(seed: u64) -> CheckResult {
    let cfg = SimConfig {
        horizon_slots: 200,
        policy: Policy::Greedy,
        ..Default::default()
    };
    let a = run_episode(&cfg, &RayleighGain, None, 0.0, false, seed).unwrap();
    let b = run_episode(&cfg, &RayleighGain, None, 0.0, false, seed).unwrap();
    let same = a == b;
    CheckResult::new(same, format!("identical outcomes: {same}"))
}
