//! CQI reporting every 5 ms, visible 2 ms later, through the IIR filter.

use mups_sim::linkadapt::{CqiState, CqiTiming};

fn main() -> mups_sim::Result<()> {
    let timing = CqiTiming { period_ticks: 35, delay_ticks: 14 };
    let mut cqi = CqiState::new(1, 0.5, 3.0, 0.0)?;
    for tick in 0..=120u64 {
        let measured = if tick < 70 { 12.0 } else { 6.0 };
        if cqi.report(tick, &[measured], &timing) {
            println!("tick {tick:>3}: report of {measured} dB generated");
        }
        if tick % 7 == 0 {
            println!("tick {tick:>3}: SU {:6.2} dB, filtered {:6.2} dB, MU {:6.2} dB", cqi.su_db(0), cqi.filtered_db(0), cqi.filtered_db(0) - cqi.mu_offset_db());
        }
    }
    Ok(())
}
