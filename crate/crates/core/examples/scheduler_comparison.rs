//! A short experiment over all policies, written to a temporary results directory.

use mups_sim::config::SimConfig;
use mups_sim::experiment::{run_experiment, ExperimentOptions};

fn main() -> mups_sim::Result<()> {
    let mut cfg = SimConfig::default();
    cfg.drops = 2;
    cfg.engine.warmup_ms = 100.0;
    cfg.engine.duration_ms = 500.0;
    let out = std::env::temp_dir().join("mups-sim-comparison");
    let report = run_experiment(&cfg, &ExperimentOptions { out, ..Default::default() })?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>8}", "policy", "q1e-2 ms", "Mbps", "MU ratio", "preempt");
    for s in &report.summaries {
        let q = s.stats.latency_quantiles[1].latency_ms.map_or("n/a".into(), |v| format!("{v:.3}"));
        println!(
            "{:>6} {q:>10} {:>10.2} {:>10.3} {:>8}",
            s.policy.name(),
            s.stats.mean_cell_tput_mbps,
            s.stats.mu_success_ratio,
            s.stats.preemptions
        );
    }
    println!("files in {}", report.run_dir.display());
    Ok(())
}
