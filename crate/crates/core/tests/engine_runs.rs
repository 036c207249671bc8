use mups_sim::config::{Omega, SimConfig};
use mups_sim::engine::{run_drop, DropSpec, MetricsStore};
use mups_sim::experiment::{run_experiment, ExperimentOptions};
use mups_sim::scheduler::Policy;
use mups_sim::traffic::ArrivalTrace;
use proptest::prelude::*;

fn short() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.engine.warmup_ms = 50.0;
    cfg.engine.duration_ms = 300.0;
    cfg
}

fn run(cfg: &SimConfig, policy: Policy, omega: Omega, trace: Option<&ArrivalTrace>) -> MetricsStore {
    run_drop(cfg, &DropSpec { policy, omega, drop: 0, seed: cfg.seed, trace, log_events: true }).unwrap()
}

#[test]
fn packets_are_conserved() {
    let mut cfg = short();
    cfg.traffic.urllc.lambda = 2000.0;
    for policy in Policy::ALL {
        let m = run(&cfg, policy, Omega::new(5, 5), None);
        let p = m.packets;
        assert!(p.arrived > 100, "{policy}: {p:?}");
        assert_eq!(p.arrived, p.delivered + p.dropped + p.in_flight, "{policy}: {p:?}");
        assert_eq!(m.latency.len() as u64, p.delivered + p.dropped, "{policy}");
        let mut ids: Vec<u64> = m.latency.iter().map(|l| l.packet_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), m.latency.len(), "{policy}: a packet was reported twice");
        for l in m.latency.iter().filter(|l| l.latency_ms.is_finite()) {
            assert!(l.latency_ms >= cfg.carrier.minislot_ms - 1e-12, "{policy}: {l:?}");
            assert!(l.harq_tx_count >= 1);
        }
    }
}

#[test]
fn replayed_trace_is_shared_by_all_policies() {
    let cfg = short();
    let omega = Omega::new(5, 5);
    let first = run(&cfg, Policy::Ps, omega, None);
    let trace = first.arrivals.clone();
    for policy in Policy::ALL {
        let m = run(&cfg, policy, omega, Some(&trace));
        assert_eq!(m.arrival_checksum, trace.checksum(), "{policy}");
        assert_eq!(m.arrivals, trace, "{policy}");
    }
}

#[test]
fn pairing_policies_on_one_trace() {
    let mut cfg = short();
    cfg.traffic.urllc.lambda = 1000.0;
    let omega = Omega::new(10, 5);
    let trace = run(&cfg, Policy::Ps, omega, None).arrivals;
    let ps = run(&cfg, Policy::Ps, omega, Some(&trace));
    let mups = run(&cfg, Policy::Mups, omega, Some(&trace));
    let cmups = run(&cfg, Policy::Cmups, omega, Some(&trace));
    assert!(mups.pairing.successes > 0);
    assert!(mups.preemptions < ps.preemptions, "{} vs {}", mups.preemptions, ps.preemptions);
    assert!(cmups.pairing.successes <= mups.pairing.successes);
    for e in cmups.pairing_events.iter().filter(|e| e.outcome == "paired") {
        assert!(e.angle_deg.unwrap() >= cfg.scheduler.theta_deg, "{e:?}");
        assert!(e.partner.is_some());
    }
    assert_eq!(ps.pairing.attempts, 0);
}

#[test]
fn identical_inputs_identical_metrics() {
    let cfg = short();
    for policy in [Policy::Pf, Policy::Mups] {
        let a = run(&cfg, policy, Omega::new(5, 5), None);
        let b = run(&cfg, policy, Omega::new(5, 5), None);
        assert_eq!(a, b, "{policy}");
    }
}

/// Without URLLC traffic every policy reduces to the same PF eMBB schedule.
#[test]
fn embb_only_cell_is_policy_independent() {
    let mut cfg = short();
    cfg.deployment.cells = 1;
    let omega = Omega::new(6, 0);
    let pf = run(&cfg, Policy::Pf, omega, None);
    assert!(!pf.cell_tput.is_empty() && pf.cell_tput.iter().any(|t| t.mbps > 0.0));
    for policy in [Policy::Wpf, Policy::Ps, Policy::Mups, Policy::Cmups] {
        let m = run(&cfg, policy, omega, None);
        assert_eq!(m.cell_tput, pf.cell_tput, "{policy}");
        assert_eq!(m.preemptions, 0);
    }
}

#[test]
fn lone_urllc_user_is_always_scheduled_free() {
    let mut cfg = short();
    cfg.deployment.cells = 1;
    let m = run(&cfg, Policy::Mups, Omega::new(0, 1), None);
    assert!(!m.pairing_events.is_empty());
    assert!(m.pairing_events.iter().all(|e| e.outcome == "scheduled_free"));
    assert_eq!((m.preemptions, m.pairing.attempts), (0, 0));
}

#[test]
fn experiment_writes_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.engine.duration_ms = 100.0;
    cfg.drops = 2;
    cfg.policies = vec![Policy::Ps, Policy::Mups];
    let opts = |threads| ExperimentOptions { out: dir.path().join(format!("t{threads}")), trace: None, threads: Some(threads) };
    let one = run_experiment(&cfg, &opts(1)).unwrap();
    let many = run_experiment(&cfg, &opts(3)).unwrap();
    assert!(one.failures.is_empty());
    for policy in ["ps", "mups"] {
        let sub = format!("{policy}_5x5");
        for file in ["summary.json", "latency_samples.csv", "cell_tput.csv", "pairing_events.csv"] {
            let a = std::fs::read(one.run_dir.join(&sub).join(file)).unwrap();
            let b = std::fs::read(many.run_dir.join(&sub).join(file)).unwrap();
            assert_eq!(a, b, "{sub}/{file}");
        }
    }
    let resolved = std::fs::read_to_string(one.run_dir.join("config.resolved.toml")).unwrap();
    assert_eq!(SimConfig::from_toml_str(&resolved).unwrap(), cfg);
    let cmp = std::fs::read_to_string(one.run_dir.join("comparison.csv")).unwrap();
    assert!(cmp.lines().next().unwrap().starts_with("policy,omega,latency_q1e-1_ms"));
    assert_eq!(cmp.lines().count(), 3);
    let trace = ArrivalTrace::read_csv(std::fs::File::open(one.run_dir.join("arrivals_5x5.csv")).unwrap()).unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(one.run_dir.join("ps_5x5/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], cfg.hash());
    assert_eq!(summary["seed"], cfg.seed);
    assert!(trace.records.len() > 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resolved_config_round_trips(
        seed: u64,
        lambda in 1.0f64..5000.0,
        xi in 0.001f64..=1.0,
        theta in 0.0f64..90.0,
        cells in prop::sample::select(vec![1usize, 3, 21]),
        drops in 1usize..50,
    ) {
        let mut cfg = SimConfig::default();
        cfg.seed = seed;
        cfg.drops = drops;
        cfg.set_dotted("traffic.urllc.lambda", &lambda.to_string()).unwrap();
        cfg.set_dotted("cqi.xi", &xi.to_string()).unwrap();
        cfg.set_dotted("scheduler.theta_deg", &theta.to_string()).unwrap();
        cfg.set_dotted("deployment.cells", &cells.to_string()).unwrap();
        let back = SimConfig::from_toml_str(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}
