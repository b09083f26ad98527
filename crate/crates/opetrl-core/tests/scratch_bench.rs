use std::time::Instant;

use opetrl_core::channel::{ChannelTrace, RayleighGain};
use opetrl_core::params::SystemParams;
use opetrl_core::power::{allocate_times, default_loop_cap, solve_p1b, SaaConfig, TxRequest};
use rand::SeedableRng;

#[test]
fn bench_allocate() {
    let p = SystemParams::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for k in [2usize, 4, 6, 8] {
        let horizon = 10 + 5 * k as u32;
        let reqs: Vec<TxRequest> = (0..k)
            .map(|i| TxRequest {
                id: i,
                ready_slot: 0,
                deadline_slot: 10 + 5 * (i as u32 + 1),
                payload_bits: 20_000.0,
            })
            .collect();
        let t0 = Instant::now();
        let n = 200;
        for _ in 0..n {
            let trace = ChannelTrace::sample(&RayleighGain, &p, 0, horizon as usize, &mut rng).unwrap();
            let _ = allocate_times(&reqs, &trace, 0, p.p_max_w, p.slot_s, p.bandwidth_hz, default_loop_cap(horizon)).unwrap();
        }
        println!("allocate k={k} horizon={horizon}: {:.1} us/solve", t0.elapsed().as_secs_f64() / n as f64 * 1e6);
    }
    // full solve_p1b
    let reqs: Vec<TxRequest> = (0..6)
        .map(|i| TxRequest { id: i, ready_slot: 0, deadline_slot: 10 + 5 * (i as u32 + 1), payload_bits: 20_000.0 })
        .collect();
    let saa = SaaConfig::default();
    let t0 = Instant::now();
    for s in 0..20u64 {
        let _ = solve_p1b(&reqs, 0, 40, &saa, &RayleighGain, s, &p, default_loop_cap(40)).unwrap();
    }
    println!("solve_p1b k=6 K=32: {:.2} ms/solve", t0.elapsed().as_secs_f64() / 20.0 * 1e3);
}
