//! URLLC arrivals, eMBB full-buffer demand and per-packet latency accounting.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Urllc,
    Embb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub class: TrafficClass,
    /// Packets per second (URLLC only).
    pub arrival_rate: f64,
    /// Payload in bytes (URLLC only).
    pub payload_bytes: u32,
}

impl TrafficProfile {
    pub fn urllc(arrival_rate: f64, payload_bytes: u32) -> Self {
        Self { class: TrafficClass::Urllc, arrival_rate, payload_bytes }
    }

    /// Full buffer: infinite backlog, no arrivals.
    pub fn embb() -> Self {
        Self { class: TrafficClass::Embb, arrival_rate: 0.0, payload_bytes: 0 }
    }

    /// Offered load in bits per second.
    pub fn offered_load_bps(&self) -> f64 {
        self.arrival_rate * self.payload_bytes as f64 * 8.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub user_id: usize,
    pub size_bytes: u32,
    /// First mini-slot in which the packet can be scheduled.
    pub arrival_tick: u64,
    /// Arrival instant inside the preceding mini-slot, as a fraction in [0, 1).
    pub arrival_offset: f64,
    pub delivered_tick: Option<u64>,
    pub deadline_ms: f64,
}

impl Packet {
    pub fn new(id: u64, user_id: usize, size_bytes: u32, arrival_tick: u64) -> Self {
        Self { id, user_id, size_bytes, arrival_tick, arrival_offset: 0.0, delivered_tick: None, deadline_ms: 1.0 }
    }

    pub fn bits(&self) -> u64 {
        self.size_bytes as u64 * 8
    }
}

/// Draws the Poisson(λ·Δt) arrivals of one tick for one URLLC user.
///
/// Packet ids are taken from `next_id`, which is advanced.
pub fn generate_arrivals<R: Rng + ?Sized>(
    profile: &TrafficProfile,
    user_id: usize,
    tick_interval_s: f64,
    current_tick: u64,
    next_id: &mut u64,
    rng: &mut R,
) -> Vec<Packet> {
    let mean = profile.arrival_rate * tick_interval_s;
    if profile.class != TrafficClass::Urllc || mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0);
    let mut offsets: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
    offsets.sort_by(f64::total_cmp);
    offsets
        .into_iter()
        .map(|offset| {
            let id = *next_id;
            *next_id += 1;
            Packet { arrival_offset: offset, ..Packet::new(id, user_id, profile.payload_bytes, current_tick) }
        })
        .collect()
}

/// Marks the packet delivered at the end of mini-slot `tick` and returns its latency in ms.
///
/// Latency runs from the start of the arrival mini-slot to the end of the
/// delivery mini-slot, so a same-slot delivery costs one mini-slot.
pub fn record_delivery(packet: &mut Packet, tick: u64, tick_interval_ms: f64, processing_offset_ms: f64) -> Result<f64> {
    if packet.delivered_tick.is_some() {
        return Err(SimError::DoubleDelivery(packet.id));
    }
    debug_assert!(tick >= packet.arrival_tick);
    packet.delivered_tick = Some(tick);
    Ok((tick + 1 - packet.arrival_tick) as f64 * tick_interval_ms + processing_offset_ms)
}

/// One row of an arrival trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub packet_id: u64,
    pub user_id: usize,
    pub arrival_tick: u64,
    pub size_bytes: u32,
}

/// Recorded URLLC arrivals, replayable across schedulers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArrivalTrace {
    pub records: Vec<TraceRecord>,
}

impl ArrivalTrace {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records: Vec<TraceRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
        records.sort_by_key(|r| (r.arrival_tick, r.packet_id));
        Ok(Self { records })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Order-sensitive FNV-1a digest of the records, for replay checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for r in &self.records {
            for x in [r.packet_id, r.user_id as u64, r.arrival_tick, r.size_bytes as u64] {
                for b in x.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TICK_MS: f64 = 0.143;

    #[test]
    fn zero_rate_has_no_arrivals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut id = 0;
        let p = TrafficProfile::urllc(0.0, 50);
        assert!(generate_arrivals(&p, 0, 1e-3, 0, &mut id, &mut rng).is_empty());
        assert!(generate_arrivals(&TrafficProfile::embb(), 0, 1e-3, 0, &mut id, &mut rng).is_empty());
    }

    #[test]
    fn offered_load_matches_table_values() {
        let p = TrafficProfile::urllc(250.0, 50);
        assert_eq!(p.offered_load_bps(), 100_000.0);
        assert_eq!(5.0 * p.offered_load_bps(), 500_000.0);
    }

    #[test]
    fn latency_examples() {
        let mut p = Packet::new(1, 0, 50, 100);
        assert!((record_delivery(&mut p, 100, TICK_MS, 0.0).unwrap() - 0.143).abs() < 1e-12);
        assert!(matches!(record_delivery(&mut p, 101, TICK_MS, 0.0), Err(SimError::DoubleDelivery(1))));

        // First attempt at the arrival mini-slot fails, retransmission 4 mini-slots later.
        let mut p = Packet::new(2, 0, 50, 100);
        let first_try = 0.143;
        let lat = record_delivery(&mut p, 104, TICK_MS, 0.0).unwrap();
        assert!((lat - first_try - 4.0 * 0.143).abs() < 1e-12);

        let mut p = Packet::new(3, 0, 50, 100);
        assert!((record_delivery(&mut p, 103, TICK_MS, 0.0).unwrap() - 0.572).abs() < 1e-12);
    }

    #[test]
    fn trace_round_trip_preserves_checksum() {
        let trace = ArrivalTrace {
            records: vec![
                TraceRecord { packet_id: 0, user_id: 3, arrival_tick: 7, size_bytes: 50 },
                TraceRecord { packet_id: 1, user_id: 4, arrival_tick: 9, size_bytes: 50 },
            ],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("packet_id,user_id,arrival_tick,size_bytes"));
        let back = ArrivalTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.checksum(), trace.checksum());
    }
}
