use mups_sim::linalg::{db_to_linear, linear_to_db};
use mups_sim::linkadapt::{
    decode_tb, select_mcs, BlerBackoff, BlerModel, CqiState, CqiTiming, DecodeResult, HarqProcess, McsTable, Transmission,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn filter_step_response_closed_form(xi in prop::sample::select(vec![0.01, 0.5, 1.0]), d0 in -10.0f64..20.0, gamma in -10.0f64..20.0, steps in 1usize..200) {
        let mut q = CqiState::with_filter(vec![d0], xi, 3.0).unwrap();
        for t in 1..=steps {
            q.apply(&[gamma]);
            let want = gamma + (1.0 - xi).powi(t as i32) * (d0 - gamma);
            prop_assert!((q.filtered_db(0) - want).abs() < 1e-12, "t={t}: {} vs {want}", q.filtered_db(0));
        }
    }

    #[test]
    fn filter_stays_bounded(xi in 0.001f64..=1.0, d0 in -30.0f64..30.0, inputs in prop::collection::vec(-30.0f64..30.0, 1..100)) {
        let mut q = CqiState::with_filter(vec![d0], xi, 3.0).unwrap();
        let bound = inputs.iter().fold(d0.abs(), |m, x| m.max(x.abs()));
        for g in inputs {
            q.apply(&[g]);
            prop_assert!(q.filtered_db(0).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn reports_respect_visibility_delay(period in 1u64..50, delay in 0u64..40, ticks in 1u64..400) {
        let timing = CqiTiming { period_ticks: period, delay_ticks: delay };
        let mut q = CqiState::new(1, 0.5, 3.0, 0.0).unwrap();
        let mut generated = Vec::new();
        for t in 0..ticks {
            if q.report(t, &[t as f64], &timing) {
                generated.push(t);
            }
            if let Some(g) = q.last_applied_generation() {
                prop_assert!(g + delay <= t, "report of {g} visible at {t}");
                prop_assert!(q.su_db(0) == g as f64);
            }
            let due = generated.iter().filter(|&&g| g + delay <= t).max();
            prop_assert_eq!(due.copied(), q.last_applied_generation());
        }
    }

    #[test]
    fn decoding_monotone(sinr_db in -10.0f64..25.0, ds in 0.0f64..5.0, rho in 0.0f64..0.9, dr in 0.0f64..0.1, pos in 0usize..15) {
        let table = McsTable::standard(0.93);
        let mcs = table.get(pos);
        let model = BlerModel::default();
        let p = |s: f64, r: f64| {
            let mut h = HarqProcess::new(0, 1, 1);
            h.record(Transmission { tick: 0, sinr: db_to_linear(s), punctured_fraction: r }).unwrap();
            decode_tb(&h, mcs, &model, &mut ChaCha8Rng::seed_from_u64(0)).failure_probability
        };
        prop_assert!(p(sinr_db + ds, rho) <= p(sinr_db, rho));
        prop_assert!(p(sinr_db, rho + dr) >= p(sinr_db, rho));
    }

    #[test]
    fn mcs_selection_monotone(cqi in -15.0f64..30.0, dc in 0.0f64..5.0, target in 1e-5f64..0.1) {
        let table = McsTable::standard(0.93);
        let b = BlerBackoff::default();
        prop_assert!(select_mcs(cqi + dc, &table, target, 0.0, &b) >= select_mcs(cqi, &table, target, 0.0, &b));
        prop_assert!(select_mcs(cqi, &table, target, 0.0, &b) <= select_mcs(cqi, &table, 0.1, 0.0, &b));
    }

    #[test]
    fn harq_spacing_enforced(rtt in 1u64..30, gap in 0u64..60) {
        let mut h = HarqProcess::new(0, rtt, 4);
        h.record(Transmission { tick: 10, sinr: 1.0, punctured_fraction: 0.0 }).unwrap();
        let second = h.record(Transmission { tick: 10 + gap, sinr: 1.0, punctured_fraction: 0.0 });
        prop_assert_eq!(second.is_ok(), gap >= rtt);
    }
}

#[test]
fn mcs_table_strictly_increasing() {
    let t = McsTable::standard(0.93);
    assert_eq!(t.len(), 15);
    for w in t.entries().windows(2) {
        assert!(w[1].spectral_efficiency > w[0].spectral_efficiency);
        assert!(w[1].threshold_db > w[0].threshold_db);
    }
}

#[test]
fn chase_combining_doubles_sinr() {
    for sinr_db in [-5.0, 0.0, 7.5, 18.0] {
        let mut h = HarqProcess::new(0, 4, 4);
        let tx = Transmission { tick: 0, sinr: db_to_linear(sinr_db), punctured_fraction: 0.0 };
        h.record(tx).unwrap();
        let single = h.effective_sinr();
        h.record(Transmission { tick: 4, ..tx }).unwrap();
        assert_eq!(h.effective_sinr(), 2.0 * single);
        assert!((linear_to_db(h.effective_sinr()) - sinr_db - 3.0103).abs() < 1e-4);
    }
}

/// At the 10 % point of the curve the empirical failure rate lands within ±20 %.
#[test]
fn empirical_bler_tracks_curve() {
    let table = McsTable::standard(0.93);
    let mcs = table.get(6);
    let model = BlerModel::default();
    let mut h = HarqProcess::new(0, 1, 1);
    h.record(Transmission { tick: 0, sinr: db_to_linear(mcs.threshold_db), punctured_fraction: 0.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let failures = (0..n).filter(|_| decode_tb(&h, mcs, &model, &mut rng).result == DecodeResult::Failure).count();
    let rate = failures as f64 / n as f64;
    assert!((rate - 0.1).abs() < 0.02, "empirical BLER {rate}");
}

#[test]
fn backoff_reference_points() {
    let b = BlerBackoff::default();
    assert!(b.backoff_db(0.1).abs() < 1e-12);
    assert!((b.backoff_db(0.01) - 2.0).abs() < 1e-12);
    assert!((b.backoff_db(1e-5) - 8.0).abs() < 1e-12);
}
