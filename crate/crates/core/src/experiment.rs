//! Batch execution of (policy, cell loading, drop) combinations and result files.
//!
//! Layout under the output root:
//!
//! ```text
//! run_<hash8>_s<seed>/
//!   config.resolved.toml
//!   comparison.csv
//!   arrivals_<e>x<u>.csv          one replayable trace per cell loading
//!   <policy>_<e>x<u>/
//!     latency_samples.csv  cell_tput.csv  pairing_events.csv  summary.json
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Omega, RunSpec, SimConfig};
use crate::engine::{aggregate_runs, run_drop, DropSpec, MetricsStore, Summary};
use crate::error::{Result, SimError};
use crate::scheduler::Policy;
use crate::traffic::ArrivalTrace;

/// Environment variable capping the drop worker pool.
pub const THREADS_ENV: &str = "MUPS_SIM_THREADS";

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every drop of one (policy, Ω) combination, merged in drop order.
pub fn run_spec(
    cfg: &SimConfig,
    spec: RunSpec,
    trace: Option<&ArrivalTrace>,
    threads: usize,
    log_events: bool,
) -> Result<Vec<MetricsStore>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        (0..cfg.drops)
            .into_par_iter()
            .map(|drop| {
                let d = DropSpec { policy: spec.policy, omega: spec.omega, drop, seed: cfg.seed, trace, log_events };
                run_drop(cfg, &d)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: Policy,
    pub omega: Omega,
    pub seed: u64,
    pub config_hash: String,
    /// Per-drop arrival-trace checksums; equal across policies on the same arrivals.
    pub arrival_checksums: Vec<String>,
    #[serde(flatten)]
    pub stats: Summary,
}

impl RunSummary {
    pub fn new(cfg: &SimConfig, spec: RunSpec, stores: &[MetricsStore]) -> Self {
        Self {
            policy: spec.policy,
            omega: spec.omega,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            arrival_checksums: stores.iter().map(|s| format!("{:016x}", s.arrival_checksum)).collect(),
            stats: aggregate_runs(stores),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary is serializable");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    pub out: PathBuf,
    pub trace: Option<ArrivalTrace>,
    /// Worker count; `None` reads [`THREADS_ENV`].
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub run_dir: PathBuf,
    pub summaries: Vec<RunSummary>,
    /// `(policy, Ω, error)` of every combination that failed; the others still wrote their files.
    pub failures: Vec<(Policy, Omega, String)>,
}

pub fn run_dir_name(cfg: &SimConfig) -> String {
    format!("run_{}_s{}", &cfg.hash()[..8], cfg.seed)
}

/// Executes all run specifications of `cfg` and writes their files.
pub fn run_experiment(cfg: &SimConfig, opts: &ExperimentOptions) -> Result<ExperimentReport> {
    cfg.validate()?;
    let threads = opts.threads.unwrap_or_else(worker_threads);
    let run_dir = opts.out.join(run_dir_name(cfg));
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.resolved.toml"), cfg.to_toml())?;

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut traced: Vec<Omega> = Vec::new();
    for spec in cfg.run_specs() {
        match run_spec(cfg, spec, opts.trace.as_ref(), threads, true) {
            Ok(stores) => {
                if opts.trace.is_none() && !traced.contains(&spec.omega) {
                    traced.push(spec.omega);
                    let mut all = ArrivalTrace::default();
                    for s in &stores {
                        all.records.extend_from_slice(&s.arrivals.records);
                    }
                    all.write_csv(BufWriter::new(File::create(run_dir.join(format!("arrivals_{}.csv", spec.omega)))?))?;
                }
                let summary = RunSummary::new(cfg, spec, &stores);
                write_run_files(&run_dir.join(format!("{}_{}", spec.policy, spec.omega)), &stores, &summary)?;
                summaries.push(summary);
            }
            Err(e) => failures.push((spec.policy, spec.omega, e.to_string())),
        }
    }
    write_comparison(&run_dir.join("comparison.csv"), &summaries)?;
    Ok(ExperimentReport { run_dir, summaries, failures })
}

fn fmt_ms(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.3}"))
}

/// Writes the four per-run files into `dir`.
pub fn write_run_files(dir: &Path, stores: &[MetricsStore], summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("latency_samples.csv"))?));
    w.write_record(["packet_id", "arrival_tick", "latency_ms", "harq_tx_count"])?;
    for l in stores.iter().flat_map(|s| &s.latency) {
        let lat = if l.latency_ms.is_finite() { format!("{:.3}", l.latency_ms) } else { "inf".to_string() };
        w.write_record([l.packet_id.to_string(), l.arrival_tick.to_string(), lat, l.harq_tx_count.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("cell_tput.csv"))?));
    w.write_record(["tick", "cell", "mbps"])?;
    for t in stores.iter().flat_map(|s| &s.cell_tput) {
        w.write_record([t.tick.to_string(), t.cell.to_string(), format!("{:.6}", t.mbps)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("pairing_events.csv"))?));
    w.write_record(["tick", "cell", "urllc_user", "outcome", "partner", "chordal", "angle_deg", "prbs"])?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.6}"));
    for e in stores.iter().flat_map(|s| &s.pairing_events) {
        w.write_record([
            e.tick.to_string(),
            e.cell.to_string(),
            e.urllc_user.to_string(),
            e.outcome.clone(),
            e.partner.map_or_else(String::new, |p| p.to_string()),
            opt(e.chordal),
            opt(e.angle_deg),
            e.prbs.clone(),
        ])?;
    }
    w.flush()?;

    let mut f = BufWriter::new(File::create(dir.join("summary.json"))?);
    f.write_all(summary.to_json().as_bytes())?;
    f.flush()?;
    Ok(())
}

/// One row per (policy, Ω).
pub fn write_comparison(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "policy",
        "omega",
        "latency_q1e-1_ms",
        "latency_q1e-2_ms",
        "latency_q1e-3_ms",
        "mean_cell_tput_mbps",
        "mu_success_ratio",
        "preemptions",
        "config_hash",
        "seed",
    ])?;
    for s in summaries {
        let q = |i: usize| fmt_ms(s.stats.latency_quantiles.get(i).and_then(|p| p.latency_ms));
        w.write_record([
            s.policy.to_string(),
            s.omega.to_string(),
            q(0),
            q(1),
            q(2),
            format!("{:.6}", s.stats.mean_cell_tput_mbps),
            format!("{:.6}", s.stats.mu_success_ratio),
            s.stats.preemptions.to_string(),
            s.config_hash.clone(),
            s.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Expands `--sweep KEY=V1,V2,...` into one configuration per value.
///
/// `omega` (or `deployment.omegas`) is special: its values are cell loadings
/// such as `5x5,20x5`, which become the Ω list of a single configuration.
pub fn expand_sweep(base: &SimConfig, sweep: &str) -> Result<Vec<SimConfig>> {
    let (key, values) =
        sweep.split_once('=').ok_or_else(|| SimError::Config(format!("sweep {sweep:?} is not of the form KEY=V1,V2")))?;
    let key = key.trim();
    if key == "omega" || key == "deployment.omegas" {
        let mut cfg = base.clone();
        cfg.deployment.omegas = split_omegas(values)?;
        cfg.validate()?;
        return Ok(vec![cfg]);
    }
    values
        .split(',')
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set_dotted(key, v.trim())?;
            Ok(cfg)
        })
        .collect()
}

/// Parses `5x5,20x5` or `(5,5),(20,5)`.
pub fn split_omegas(values: &str) -> Result<Vec<Omega>> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for ch in values.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.parse()?);
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() {
        out.push(cur.parse()?);
    }
    Ok(out)
}
