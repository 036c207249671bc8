use mups_sim::engine::{latency_quantile, ccdf_at};
use mups_sim::traffic::{generate_arrivals, record_delivery, ArrivalTrace, Packet, TraceRecord, TrafficProfile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const TICK_S: f64 = 0.143e-3;

#[test]
fn per_tick_counts_fit_poisson() {
    let profile = TrafficProfile::urllc(250.0, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut next = 0;
    let ticks = 100_000usize;
    let users = 20;
    let mut observed = [0f64; 3];
    for t in 0..ticks as u64 {
        for u in 0..users {
            observed[generate_arrivals(&profile, u, TICK_S, t, &mut next, &mut rng).len().min(2)] += 1.0;
        }
    }
    let pois = Poisson::new(250.0 * TICK_S).unwrap();
    let n = (ticks * users) as f64;
    let expected = [pois.pmf(0) * n, pois.pmf(1) * n, (1.0 - pois.pmf(0) - pois.pmf(1)) * n];
    let stat: f64 = observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-squared {stat} exceeds {critical}");
}

#[test]
fn arrivals_are_ordered_and_sized() {
    let profile = TrafficProfile::urllc(5000.0, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut next = 7;
    for t in 0..1000 {
        let pkts = generate_arrivals(&profile, 3, TICK_S, t, &mut next, &mut rng);
        for w in pkts.windows(2) {
            assert!(w[0].arrival_offset <= w[1].arrival_offset);
            assert_eq!(w[1].id, w[0].id + 1);
        }
        for p in &pkts {
            assert_eq!((p.user_id, p.size_bytes, p.arrival_tick), (3, 50, t));
            assert!((0.0..1.0).contains(&p.arrival_offset));
        }
    }
    assert!(generate_arrivals(&TrafficProfile::embb(), 0, TICK_S, 0, &mut next, &mut rng).is_empty());
}

#[test]
fn delivery_is_recorded_once() {
    let mut p = Packet::new(1, 0, 50, 10);
    let lat = record_delivery(&mut p, 10, 0.143, 0.0).unwrap();
    assert!((lat - 0.143).abs() < 1e-12);
    assert!(record_delivery(&mut p, 12, 0.143, 0.0).is_err());
}

#[test]
fn trace_round_trip() {
    let trace = ArrivalTrace {
        records: (0..50).map(|i| TraceRecord { packet_id: i, user_id: (i % 4) as usize, arrival_tick: i * 3, size_bytes: 50 }).collect(),
    };
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("packet_id,user_id,arrival_tick,size_bytes"));
    let back = ArrivalTrace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, trace);
    assert_eq!(back.checksum(), trace.checksum());
}

/// Smallest sample whose empirical exceedance probability is at most `level`.
fn quantile_oracle(samples: &[f64], level: f64) -> f64 {
    let n = samples.len() as f64;
    samples
        .iter()
        .copied()
        .filter(|&x| samples.iter().filter(|&&y| y > x).count() as f64 <= level * n + 1e-9)
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn quantile_matches_order_statistic(samples in prop::collection::vec(prop_oneof![0.1f64..20.0, Just(1.0), Just(f64::INFINITY)], 500..1200), level in prop::sample::select(vec![0.1, 0.05, 0.02])) {
        let q = latency_quantile(&samples, level).unwrap();
        prop_assert_eq!(q, quantile_oracle(&samples, level));
        prop_assert!(ccdf_at(&samples, q) <= level);
    }

    #[test]
    fn quantile_needs_ten_tail_samples(n in 1usize..1000) {
        let samples = vec![1.0; n];
        prop_assert_eq!(latency_quantile(&samples, 1e-2).is_ok(), n >= 1000);
    }
}
