//! Poisson URLLC arrivals per mini-slot and their empirical statistics.

use mups_sim::traffic::{generate_arrivals, TrafficProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let profile = TrafficProfile::urllc(250.0, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut next_id = 0;
    let ticks = 200_000u64;
    let mut per_tick = [0u64; 4];
    let mut last = None;
    let mut gaps = Vec::new();
    for t in 0..ticks {
        let pkts = generate_arrivals(&profile, 0, 0.143e-3, t, &mut next_id, &mut rng);
        per_tick[pkts.len().min(3)] += 1;
        for p in pkts {
            let at = (p.arrival_tick as f64 + p.arrival_offset) * 0.143;
            if let Some(prev) = last {
                gaps.push(at - prev);
            }
            last = Some(at);
        }
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("{next_id} packets, offered load {:.0} bit/s", profile.offered_load_bps());
    println!("mean inter-arrival {mean_gap:.3} ms (expected 4.000 ms)");
    println!("arrivals per tick 0/1/2/3+: {per_tick:?}");
}
