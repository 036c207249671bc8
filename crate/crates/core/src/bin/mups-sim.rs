use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mups_sim::config::{load_config, SimConfig};
use mups_sim::experiment::{expand_sweep, run_experiment, ExperimentOptions};
use mups_sim::scheduler::Policy;
use mups_sim::traffic::ArrivalTrace;
use mups_sim::Result;

/// Multi-cell downlink simulator comparing PF, WPF, PS, MUPS and C-MUPS scheduling.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    drops: Option<usize>,
    /// Comma-separated policy names, e.g. `ps,mups`.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<Policy>>,
    /// `KEY=V1,V2,...`; `omega=5x5,20x5` sweeps cell loadings.
    #[arg(long)]
    sweep: Option<String>,
    /// Arrival trace CSV replayed instead of drawing arrivals.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Decode by threshold instead of drawing from the BLER curve.
    #[arg(long)]
    deterministic_bler: bool,
    /// Extra `KEY=VALUE` overrides in dotted form.
    #[arg(long = "set")]
    sets: Vec<String>,
}

fn resolve(args: &Args) -> Result<Vec<SimConfig>> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => SimConfig::default(),
    };
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| mups_sim::SimError::Config(format!("--set {s:?} is not of the form KEY=VALUE")))?;
        cfg.set_dotted(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(drops) = args.drops {
        cfg.drops = drops;
    }
    if let Some(p) = &args.policies {
        cfg.policies.clone_from(p);
    }
    if args.deterministic_bler {
        cfg.link.deterministic_bler = true;
    }
    cfg.validate()?;
    match &args.sweep {
        Some(s) => expand_sweep(&cfg, s),
        None => Ok(vec![cfg]),
    }
}

fn run(args: &Args) -> Result<bool> {
    let trace = args.replay.as_ref().map(|p| ArrivalTrace::read_csv(File::open(p)?)).transpose()?;
    let opts = ExperimentOptions { out: args.out.clone(), trace, threads: None };
    let mut ok = true;
    for cfg in resolve(args)? {
        let report = run_experiment(&cfg, &opts)?;
        for s in &report.summaries {
            let q = s.stats.latency_quantiles.last().and_then(|p| p.latency_ms);
            println!(
                "{:>6} {:>6}  q(1e-3)={:>8}  tput={:8.3} Mbps  mu_success={:.3}  preemptions={}",
                s.policy,
                s.omega.to_string(),
                q.map_or("n/a".to_string(), |v| format!("{v:.3} ms")),
                s.stats.mean_cell_tput_mbps,
                s.stats.mu_success_ratio,
                s.stats.preemptions
            );
        }
        for (policy, omega, err) in &report.failures {
            eprintln!("error: {policy} {omega}: {err}");
            ok = false;
        }
        println!("results in {}", report.run_dir.display());
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
