//! Scores eMBB partners for one URLLC user and zero-forces the accepted pair.

use mups_sim::linalg::{inner, CVector};
use mups_sim::phy::{angle_separation, chordal_distance, zero_forcing, Precoder};
use mups_sim::scheduler::{try_mu_pairing, PairingMode, PartnerCandidate};
use num_complex::Complex64;

fn beam(n: usize, phase_step: f64) -> Precoder {
    Precoder::unit(CVector::from_fn(n, |i, _| Complex64::from_polar(1.0 / (n as f64).sqrt(), phase_step * i as f64)))
}

fn main() -> mups_sim::Result<()> {
    let urllc = beam(8, 0.0);
    let partners = [beam(8, 0.3), beam(8, 1.2), beam(8, 0.7)];
    for (i, p) in partners.iter().enumerate() {
        println!("partner {i}: chordal {:.3}, angle {:5.1}°", chordal_distance(&urllc, p), angle_separation(&urllc, p));
    }
    let candidates: Vec<_> =
        partners.iter().enumerate().map(|(i, p)| PartnerCandidate { user_id: 10 + i, pairs: vec![(&urllc, p)] }).collect();
    for (mode, theta) in [(PairingMode::Mups, 60.0), (PairingMode::Cmups, 60.0), (PairingMode::Cmups, 85.0)] {
        let d = try_mu_pairing(0, 0, 1, &candidates, mode, theta, 0.1, 1.0);
        println!("{mode:?} θ={theta}: {} with {:?}", d.outcome.name(), d.embb_partner);
    }

    let zf = zero_forcing(&[urllc.clone(), partners[1].clone()], 1.0)?;
    println!("V_MUᴴ V_zf:");
    for a in [&urllc, &partners[1]] {
        let row: Vec<String> = zf.iter().map(|c| format!("{:.6}", inner(&a.vector, &c.vector).norm())).collect();
        println!("  [{}]", row.join(", "));
    }
    Ok(())
}
