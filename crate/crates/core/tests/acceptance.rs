//! Acceptance run: one line per criterion, non-zero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use mups_sim::channel::{
    dual_codebook, generate_channel, hardening_from_energies, quantize_dual_codebook, AntennaConfig, LinkGeometry,
};
use mups_sim::config::{Omega, RunSpec, SimConfig};
use mups_sim::engine::{aggregate_runs, MetricsStore, Summary};
use mups_sim::experiment::{run_experiment, run_spec, worker_threads, ExperimentOptions};
use mups_sim::linalg::{db_to_linear, linear_to_db, CMatrix, CVector};
use mups_sim::linkadapt::{CqiState, CqiTiming, HarqProcess, Transmission};
use mups_sim::phy::{chordal_distance, compute_sinr, lmmse_irc_combiner, Combiner, Precoder, TransmissionContext};
use mups_sim::scheduler::{accepts, evaluate_partner, PairingMode, PartnerCandidate, Policy};
use mups_sim::traffic::{generate_arrivals, ArrivalTrace, TrafficProfile};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn q3(s: &Summary) -> f64 {
    s.latency_quantiles.iter().find(|q| q.level == 1e-3).and_then(|q| q.latency_ms).unwrap_or(f64::NAN)
}

fn runs(cfg: &SimConfig, policy: Policy, omega: Omega, trace: Option<&ArrivalTrace>) -> Vec<MetricsStore> {
    run_spec(cfg, RunSpec { policy, omega }, trace, worker_threads(), false).expect("simulation run")
}

fn checksums(stores: &[MetricsStore]) -> Vec<u64> {
    stores.iter().map(|s| s.arrival_checksum).collect()
}

/// Latency ordering at (5,5): returns the verdict and the MUPS and C-MUPS runs for the pairing check.
fn latency_ordering() -> (Verdict, Vec<MetricsStore>, Vec<MetricsStore>) {
    let mut cfg = SimConfig::default();
    cfg.deployment.cells = 3;
    cfg.drops = 4;
    cfg.engine.duration_ms = 7000.0;
    let omega = Omega::new(5, 5);
    let start = Instant::now();
    let mut stores = Vec::new();
    for policy in Policy::ALL {
        stores.push((policy, runs(&cfg, policy, omega, None)));
    }
    let wall = start.elapsed().as_secs_f64();
    let sum = |p: Policy| aggregate_runs(&stores.iter().find(|(q, _)| *q == p).unwrap().1);
    let (pf, wpf, ps, mups) = (sum(Policy::Pf), sum(Policy::Wpf), sum(Policy::Ps), sum(Policy::Mups));
    let same_arrivals = stores.iter().all(|(_, s)| checksums(s) == checksums(&stores[0].1));
    let enough = stores.iter().all(|(_, s)| aggregate_runs(s).latency_samples >= 100_000);
    let ordering = q3(&mups) <= q3(&ps) && q3(&ps) < q3(&wpf) && q3(&wpf) < q3(&pf);
    let floor = pf.latency_ccdf_at_5ms > 1e-2;
    let detail = format!(
        "q(1e-3) ms: mups {:.3} ps {:.3} wpf {:.3} pf {:.3}; PF CCDF(5 ms) {:.2e}; {} packets/policy; {:.0} s wall",
        q3(&mups),
        q3(&ps),
        q3(&wpf),
        q3(&pf),
        pf.latency_ccdf_at_5ms,
        ps.latency_samples,
        wall
    );
    let take = |p: Policy, stores: &mut Vec<(Policy, Vec<MetricsStore>)>| {
        let i = stores.iter().position(|(q, _)| *q == p).unwrap();
        stores.swap_remove(i).1
    };
    let m = take(Policy::Mups, &mut stores);
    let c = take(Policy::Cmups, &mut stores);
    (verdict(ordering && floor && same_arrivals && enough && wall < 600.0, detail), m, c)
}

fn pairing_restriction(mups: &[MetricsStore], cmups: &[MetricsStore], hi_load: &(Summary, Summary)) -> Verdict {
    let (m, c) = (aggregate_runs(mups), aggregate_runs(cmups));
    let same = checksums(mups) == checksums(cmups);
    let pass = same && c.mu_success_ratio < m.mu_success_ratio && c.mean_mu_rate > m.mean_mu_rate;
    verdict(
        pass,
        format!(
            "(5,5): success ratio cmups {:.4} vs mups {:.4}, MU rate {:.4} vs {:.4} b/s/Hz; at (20,5): ratio {:.4} vs {:.4}, MU rate {:.4} vs {:.4}",
            c.mu_success_ratio,
            m.mu_success_ratio,
            c.mean_mu_rate,
            m.mean_mu_rate,
            hi_load.1.mu_success_ratio,
            hi_load.0.mu_success_ratio,
            hi_load.1.mean_mu_rate,
            hi_load.0.mean_mu_rate
        ),
    )
}

/// MUPS against PS at (20,5) on one replayed trace; also returns the MUPS and C-MUPS summaries.
fn throughput_gain() -> (Verdict, (Summary, Summary)) {
    let mut cfg = SimConfig::default();
    cfg.drops = 2;
    cfg.engine.duration_ms = 3000.0;
    let omega = Omega::new(20, 5);
    let ps = runs(&cfg, Policy::Ps, omega, None);
    let mut recorded = ArrivalTrace::default();
    for s in &ps {
        recorded.records.extend_from_slice(&s.arrivals.records);
    }
    let mut csv = Vec::new();
    recorded.write_csv(&mut csv).unwrap();
    let trace = ArrivalTrace::read_csv(csv.as_slice()).unwrap();
    let mups = runs(&cfg, Policy::Mups, omega, Some(&trace));
    let cmups = runs(&cfg, Policy::Cmups, omega, Some(&trace));
    let same = checksums(&ps) == checksums(&mups) && checksums(&mups) == checksums(&cmups);
    let (p, m) = (aggregate_runs(&ps), aggregate_runs(&mups));
    let gain = m.mean_cell_tput_mbps / p.mean_cell_tput_mbps - 1.0;
    let pass = same && gain >= 0.05 && 2 * m.preemptions <= p.preemptions;
    let v = verdict(
        pass,
        format!(
            "cell tput mups {:.2} vs ps {:.2} Mbps ({:+.1}%); preemptions {} vs {}",
            m.mean_cell_tput_mbps,
            p.mean_cell_tput_mbps,
            100.0 * gain,
            m.preemptions,
            p.preemptions
        ),
    );
    (v, (m, aggregate_runs(&cmups)))
}

fn zf_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let cfg = SimConfig::default();
    let sched = cfg.scheduler_config(Policy::Mups).unwrap();
    let antennas = AntennaConfig::default();
    let (cb1, cb2) = dual_codebook(antennas.n_tx, 4, 4).unwrap();
    let beam = |rng: &mut ChaCha8Rng| {
        let g = LinkGeometry { angle_deg: rand::Rng::random_range(rng, -60.0..60.0), ..LinkGeometry::with_gain(1.0) };
        quantize_dual_codebook(&generate_channel(&g, &antennas, rng), &cb1, &cb2).unwrap().precoder
    };
    let (mut accepted, mut worst) = (0, 0.0f64);
    let sqrt_p = (sched.power_budget / 2.0).sqrt();
    while accepted < 1000 {
        let (u, e) = (beam(&mut rng), beam(&mut rng));
        let cand = PartnerCandidate { user_id: 1, pairs: vec![(&u, &e)] };
        let score = evaluate_partner(&cand, sched.power_budget);
        if !accepts(&score, PairingMode::Mups, sched.theta_deg, sched.d_min) {
            continue;
        }
        accepted += 1;
        let (zu, ze) = &score.zf.as_ref().unwrap()[0];
        let v_mu = CMatrix::from_columns(&[u.vector.clone(), e.vector.clone()]);
        let v_zf = CMatrix::from_columns(&[zu.vector.clone(), ze.vector.clone()]);
        let target = CMatrix::from_diagonal_element(2, 2, Complex64::new(sqrt_p, 0.0));
        worst = worst.max((v_mu.adjoint() * v_zf - target).norm());
    }
    verdict(worst < 1e-9, format!("{accepted} accepted pairings, max ‖V_MUᴴV_zf − diag(√P)‖_F = {worst:.2e}"))
}

fn chordal_cases() -> Verdict {
    let e = |k: usize| CVector::from_fn(8, |i, _| Complex64::new(if i == k { 1.0 } else { 0.0 }, 0.0));
    let v = Precoder::unit(e(0));
    let mid = Precoder::unit((e(0) + e(1)).map(|x| x * std::f64::consts::FRAC_1_SQRT_2));
    let (d0, d1, dh) = (chordal_distance(&v, &v), chordal_distance(&v, &Precoder::unit(e(1))), chordal_distance(&v, &mid));
    let pass = d0 == 0.0 && (d1 - 1.0).abs() < 1e-12 && (dh - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12;
    verdict(pass, format!("d(v,v) = {d0}, d(e1,e2) = {d1}, d(e1,(e1+e2)/√2) = {dh:.15}"))
}

fn hardening_trend() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let stats: Vec<f64> = [2usize, 8, 64]
        .iter()
        .map(|&n| {
            let antennas = AntennaConfig { n_tx: n, n_rx: n, tx_correlation: 0.0, rx_correlation: 0.0, ..AntennaConfig::default() };
            let g = LinkGeometry::with_gain(1.0);
            let energies: Vec<f64> = (0..10_000).map(|_| generate_channel(&g, &antennas, &mut rng).frobenius_norm_sq()).collect();
            hardening_from_energies(&energies, (n, n)).unwrap().statistic
        })
        .collect();
    verdict(stats[0] > stats[1] && stats[1] > stats[2], format!("(2,2) {:.3e} > (8,8) {:.3e} > (64,64) {:.3e}", stats[0], stats[1], stats[2]))
}

fn cqi_closed_form() -> Verdict {
    let timing = CqiTiming { period_ticks: 35, delay_ticks: 14 };
    let (d0, gamma) = (14.0, 3.5);
    let mut worst = 0.0f64;
    for xi in [0.01, 0.5, 1.0] {
        let mut q = CqiState::with_filter(vec![d0], xi, 3.0).unwrap();
        let mut applied = 0;
        for tick in 1..=35 * 400 {
            q.report(tick, &[gamma], &timing);
            if q.last_applied_generation().is_some_and(|g| g / 35 > applied) {
                applied += 1;
                let want = gamma + (1.0 - xi).powi(applied as i32) * (d0 - gamma);
                worst = worst.max((q.filtered_db(0) - want).abs());
            }
        }
    }
    verdict(worst < 1e-12, format!("max deviation from Γ + (1−ξ)^t(∂(0)−Γ) over ξ ∈ {{0.01, 0.5, 1}}: {worst:.2e}"))
}

fn chase_gain() -> Verdict {
    let mut h = HarqProcess::new(0, 4, 4);
    let tx = Transmission { tick: 0, sinr: db_to_linear(4.2), punctured_fraction: 0.0 };
    h.record(tx).unwrap();
    let single = h.effective_sinr();
    h.record(Transmission { tick: 4, ..tx }).unwrap();
    let gain = linear_to_db(h.effective_sinr()) - linear_to_db(single);
    verdict(h.effective_sinr() == 2.0 * single && (gain - 3.01).abs() <= 0.01, format!("combined/single = {:.15}, gain {gain:.4} dB", h.effective_sinr() / single))
}

fn traffic_fidelity() -> Verdict {
    let profile = TrafficProfile::urllc(250.0, 50);
    let tick_s = 0.143e-3;
    let (ticks, users) = (100_000u64, 25usize);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut next = 0;
    let mut counts = [0f64; 3];
    let mut last = vec![None::<f64>; users];
    let (mut gap_sum, mut gaps) = (0.0, 0usize);
    for t in 0..ticks {
        for (u, prev) in last.iter_mut().enumerate() {
            let pkts = generate_arrivals(&profile, u, tick_s, t, &mut next, &mut rng);
            counts[pkts.len().min(2)] += 1.0;
            for p in pkts {
                let at = (t as f64 + p.arrival_offset) * tick_s;
                if let Some(before) = prev.replace(at) {
                    gap_sum += at - before;
                    gaps += 1;
                }
            }
        }
    }
    let mean_gap = gap_sum / gaps as f64;
    let mean_ok = (mean_gap * 250.0 - 1.0).abs() <= 0.01;
    let pois = Poisson::new(250.0 * tick_s).unwrap();
    let n = (ticks as usize * users) as f64;
    let expected = [pois.pmf(0) * n, pois.pmf(1) * n, (1.0 - pois.pmf(0) - pois.pmf(1)) * n];
    let chi2: f64 = counts.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
    verdict(
        mean_ok && chi2 < critical,
        format!("{users} streams × {ticks} ticks: mean inter-arrival {:.4} ms (4 ms ± 1%), χ² = {chi2:.2} < {critical:.2}", mean_gap * 1e3),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SimConfig::default();
    cfg.drops = 4;
    cfg.engine.duration_ms = 300.0;
    let n = worker_threads().max(4);
    let run = |tag: &str, threads| {
        let opts = ExperimentOptions { out: dir.path().join(tag), trace: None, threads: Some(threads) };
        run_experiment(&cfg, &opts).unwrap()
    };
    let (a, b, c) = (run("a", 1), run("b", 1), run("c", n));
    let mut identical = true;
    for s in &a.summaries {
        let file = format!("{}_{}/summary.json", s.policy, s.omega);
        let bytes = |r: &mups_sim::experiment::ExperimentReport| std::fs::read(r.run_dir.join(&file)).unwrap();
        identical &= bytes(&a) == bytes(&b) && bytes(&a) == bytes(&c);
    }
    verdict(identical, format!("{} summaries byte-identical across two runs and 1 vs {n} threads", a.summaries.len()))
}

fn sinr_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let s = Scene::random(&mut rng, 8, 1 + k % 4, k % 2, k % 6);
        let intra: Vec<(&CVector, f64)> = s.intra.iter().map(|(v, p)| (v, *p)).collect();
        let inter: Vec<(&CMatrix, &CVector, f64)> = s.inter.iter().map(|(h, v, p)| (h, v, *p)).collect();
        let ctx = TransmissionContext { serving: (&s.h, &s.v, s.p), intra_cell: &intra, inter_cell: &inter };
        worst = worst.max(rel_err(compute_sinr(&ctx, &lmmse_irc_combiner(&ctx, 1.0).unwrap()), brute_irc_sinr(&s)));
        let u = random_vector(&mut rng, s.h.nrows());
        worst = worst.max(rel_err(compute_sinr(&ctx, &Combiner { vector: u.clone() }), brute_sinr(&s, u.as_slice())));
    }
    verdict(worst < 1e-9, format!("1000 contexts, max relative error {worst:.2e}"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {:<28} {}  {}", name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    let (v1, mups, cmups) = latency_ordering();
    report(1, "latency ordering", v1);
    let (v2, hi_load) = throughput_gain();
    report(2, "MUPS vs PS throughput", v2);
    report(3, "C-MUPS pairing restriction", pairing_restriction(&mups, &cmups, &hi_load));
    report(4, "ZF exactness", zf_exactness());
    report(5, "chordal distance", chordal_cases());
    report(6, "channel hardening", hardening_trend());
    report(7, "CQI filter closed form", cqi_closed_form());
    report(8, "HARQ chase combining", chase_gain());
    report(9, "traffic fidelity", traffic_fidelity());
    report(10, "determinism", determinism());
    report(11, "SINR oracle", sinr_oracle());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
