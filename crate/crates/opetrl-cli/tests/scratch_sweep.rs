use opetrl_cli::commands::eval_outcomes;
use opetrl_cli::config::AppConfig;
use opetrl_cli::checkpoint;
use opetrl_core::agent::QNetwork;
use opetrl_core::sim::{aggregate, Policy};

#[test]
fn pmax_sweep_dt_regime() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("zero.bin");
    checkpoint::save(&ck, &QNetwork::zeros(17)).unwrap();
    let mut cfg = AppConfig::default();
    cfg.set("raw_bits", "20000").unwrap();
    println!("p_max   | OPETRL success energy | one_task success energy | E-ratio-to-prev");
    let mut prev: Option<f64> = None;
    for p in [0.5e-6, 1.0e-6, 2.0e-6, 4.0e-6, 8.0e-6] {
        let mut point = cfg.clone();
        point.set("p_max_w", &p.to_string()).unwrap();
        let op: Vec<_> = eval_outcomes(&point, Policy::Opetrl, 21, Some(&ck), 24)
            .unwrap().into_iter().map(|(_, o)| o.metrics).collect();
        let ot: Vec<_> = eval_outcomes(&point, Policy::OneTask, 21, None, 24)
            .unwrap().into_iter().map(|(_, o)| o.metrics).collect();
        let (a, b) = (aggregate(&op), aggregate(&ot));
        let ratio = prev.map(|e| b.energy_mean_j / e).unwrap_or(f64::NAN);
        prev = Some(b.energy_mean_j);
        println!(
            "{:.1e} | {:.4} {:.4e} | {:.4} {:.4e} | {ratio:.3}",
            p, a.success_mean, a.energy_mean_j, b.success_mean, b.energy_mean_j
        );
    }
}
