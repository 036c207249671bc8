//! Channel hardening: the spread of normalized channel energy shrinks as arrays grow.

use mups_sim::channel::{generate_channel, hardening_statistic, AntennaConfig, LinkGeometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mups_sim::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let geometry = LinkGeometry::with_gain(1.0);
    println!("{:>8} {:>12}", "array", "hardening");
    for n in [2, 8, 16, 64] {
        let antennas = AntennaConfig { n_tx: n, n_rx: n, tx_correlation: 0.0, rx_correlation: 0.0, ..AntennaConfig::default() };
        let samples: Vec<_> = (0..2000).map(|_| generate_channel(&geometry, &antennas, &mut rng)).collect();
        let h = hardening_statistic(&samples)?;
        println!("{:>8} {:>12.6}", format!("{n}x{n}"), h.statistic);
    }
    Ok(())
}
