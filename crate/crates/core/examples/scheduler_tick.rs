//! One loaded cell: a URLLC packet lands mid-slot under each policy.

use mups_sim::carrier::Carrier;
use mups_sim::config::SimConfig;
use mups_sim::linalg::CVector;
use mups_sim::linkadapt::CqiState;
use mups_sim::phy::Precoder;
use mups_sim::scheduler::{schedule_tick, CellState, Demand, Policy, SchedUser, UrllcDemand};
use mups_sim::traffic::TrafficClass;
use num_complex::Complex64;

fn beam(k: usize) -> Precoder {
    Precoder::unit(CVector::from_fn(8, |i, _| if i == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }))
}

fn main() -> mups_sim::Result<()> {
    let cfg = SimConfig::default();
    let carrier = Carrier::default();
    let n_sb = carrier.n_subbands();
    let user = |id: usize, class, k| -> mups_sim::Result<SchedUser> {
        Ok(SchedUser { id, class, cqi: CqiState::new(n_sb, 0.01, 3.0, 15.0)?, avg_rate: 1.0, precoders: vec![beam(k); n_sb] })
    };
    for policy in Policy::ALL {
        let sched = cfg.scheduler_config(policy)?;
        let users = vec![user(0, TrafficClass::Embb, 0)?, user(1, TrafficClass::Embb, 1)?, user(2, TrafficClass::Urllc, 2)?];
        let mut cell = CellState::new(0, users, carrier.prbs);
        cell.plan = schedule_tick(&cell, 0, &sched)?.plan.expect("slot boundary");
        cell.urllc_demand = vec![UrllcDemand { user: 2, demand: Demand::New { bits: 400 } }];
        let out = schedule_tick(&cell, 3, &sched)?;
        let outcomes: Vec<&str> = out.decisions.iter().map(|d| d.outcome.name()).collect();
        println!(
            "{policy:>6}: {} URLLC transmissions, {} preemptions, pairing {}/{}, decisions {outcomes:?}",
            out.urllc.len(),
            out.preemptions,
            out.pairing_successes,
            out.pairing_attempts
        );
    }
    Ok(())
}
