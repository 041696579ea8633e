//! Sweep clock noise against send density and watch rank agreement.
//!
//! When messages are far apart relative to clock noise, plain timestamp
//! order is fine and everything scores near the maximum. As the ratio
//! shrinks, probabilistic batching degrades gracefully while hard
//! uncertainty intervals start refusing to order anything.
//!
//! Release mode recommended: `cargo run --release --example simulation_trend`

use tommy::{run_sweep, SequencerKind, SweepConfig};

fn main() -> tommy::Result<()> {
    let cfg = SweepConfig {
        n_clients: 10,
        n_messages_per_client: 20,
        sigma_us: vec![2.0, 8.0, 32.0, 128.0],
        mean_gap_us: vec![25.0],
        trials_per_point: 8,
        seed: 1,
        mu_us: 0.0,
        threshold: 0.75,
        p_safe: 0.999,
        resolution_us: 1.0,
        baselines: vec![SequencerKind::Tommy, SequencerKind::Truetime, SequencerKind::Wfo],
        mode: Default::default(),
        gap: Default::default(),
        network: Default::default(),
        heartbeat_interval_us: None,
    };
    let rows = run_sweep(&cfg)?;

    // The score counts pairs ordered the same way as ground truth minus
    // pairs ordered the opposite way; same-rank pairs score zero.
    let n = cfg.n_clients * cfg.n_messages_per_client;
    let max_score = (n * (n - 1) / 2) as f64;
    println!("{} messages per trial, perfect score {max_score}", n);
    println!("{:>9} {:>10} {:>10} {:>10}", "sigma_us", "batched", "intervals", "raw_ts");

    for &sigma in &cfg.sigma_us {
        let cell: Vec<_> = rows.iter().filter(|r| r.sigma_scale == sigma).collect();
        let mean = |kind: SequencerKind| {
            cell.iter()
                .map(|r| r.result.ras.get(&kind).copied().unwrap_or(0) as f64)
                .sum::<f64>()
                / cell.len() as f64
        };
        println!(
            "{:>9} {:>10.1} {:>10.1} {:>10.1}",
            sigma,
            mean(SequencerKind::Tommy),
            mean(SequencerKind::Truetime),
            mean(SequencerKind::Wfo),
        );
    }
    Ok(())
}
