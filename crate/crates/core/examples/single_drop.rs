//! One drop of every policy at one cell loading.
//!
//! Usage: `single_drop [duration_ms] [e x u]`, e.g. `single_drop 2000 20x5`.

use std::time::Instant;

use mups_sim::config::{Omega, SimConfig};
use mups_sim::engine::{aggregate_runs, run_drop, DropSpec};
use mups_sim::scheduler::Policy;

fn main() -> mups_sim::Result<()> {
    let mut cfg = SimConfig::default();
    cfg.engine.duration_ms = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000.0);
    let omega = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(Omega::new(5, 5));
    let ms = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!("{:>6} {:>7} {:>9} {:>9} {:>9} {:>8} {:>9}", "policy", "wall s", "q1e-2 ms", "q1e-3 ms", "Mbps", "preempt", "MU pairs");
    for policy in Policy::ALL {
        let t = Instant::now();
        let spec = DropSpec { policy, omega, drop: 0, seed: cfg.seed, trace: None, log_events: false };
        let s = aggregate_runs(&[run_drop(&cfg, &spec)?]);
        println!(
            "{:>6} {:>7.2} {:>9} {:>9} {:>9.2} {:>8} {:>9}",
            policy.name(),
            t.elapsed().as_secs_f64(),
            ms(s.latency_quantiles[1].latency_ms),
            ms(s.latency_quantiles[2].latency_ms),
            s.mean_cell_tput_mbps,
            s.preemptions,
            format!("{}/{}", s.pairing_successes, s.pairing_attempts)
        );
    }
    Ok(())
}
