//! Chase combining: each retransmission adds its SINR to the combined block.

use mups_sim::linalg::{db_to_linear, linear_to_db};
use mups_sim::linkadapt::{decode_tb, DecodeResult, BlerModel, HarqProcess, McsTable, Transmission};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mups_sim::Result<()> {
    let table = McsTable::standard(0.93);
    let mcs = table.get(8);
    let model = BlerModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut harq = HarqProcess::new(0, 4, 4);
    let sinr = db_to_linear(mcs.threshold_db - 3.0);
    for k in 0..4u64 {
        harq.record(Transmission { tick: 4 * k, sinr, punctured_fraction: 0.0 })?;
        let out = decode_tb(&harq, mcs, &model, &mut rng);
        println!(
            "tx {}: effective {:6.2} dB (threshold {:.2} dB), P(fail) {:.4}, {:?}",
            harq.tx_count(),
            linear_to_db(harq.effective_sinr()),
            mcs.threshold_db,
            out.failure_probability,
            out.result
        );
        if out.result == DecodeResult::Success {
            break;
        }
    }
    Ok(())
}
