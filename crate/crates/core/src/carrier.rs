use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// OFDMA numerology: PRB grid, subbands and the two TTI lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Carrier {
    pub prbs: usize,
    pub subband_prbs: usize,
    pub subcarriers_per_prb: usize,
    /// OFDM symbols per URLLC mini-slot.
    pub symbols_per_minislot: usize,
    /// Mini-slots per eMBB slot.
    pub minislots_per_slot: usize,
    pub minislot_ms: f64,
}

impl Default for Carrier {
    /// 10 MHz at 15 kHz: 50 PRBs, 2-symbol mini-slots, 14-symbol slots.
    fn default() -> Self {
        Self { prbs: 50, subband_prbs: 5, subcarriers_per_prb: 12, symbols_per_minislot: 2, minislots_per_slot: 7, minislot_ms: 0.143 }
    }
}

impl Carrier {
    pub fn validate(&self) -> Result<()> {
        if self.prbs == 0 || self.subband_prbs == 0 || self.subcarriers_per_prb == 0 {
            return Err(SimError::Config("carrier needs at least one PRB, subband and subcarrier".into()));
        }
        if self.symbols_per_minislot == 0 || self.minislots_per_slot == 0 || !(self.minislot_ms > 0.0) {
            return Err(SimError::Config("TTI lengths must be positive".into()));
        }
        Ok(())
    }

    pub fn n_subbands(&self) -> usize {
        self.prbs.div_ceil(self.subband_prbs)
    }

    pub fn subband_of(&self, prb: usize) -> usize {
        prb / self.subband_prbs
    }

    pub fn subband_prb_range(&self, subband: usize) -> std::ops::Range<usize> {
        let lo = subband * self.subband_prbs;
        lo..(lo + self.subband_prbs).min(self.prbs)
    }

    pub fn slot_of(&self, tick: u64) -> u64 {
        tick / self.minislots_per_slot as u64
    }

    pub fn minislot_index(&self, tick: u64) -> usize {
        (tick % self.minislots_per_slot as u64) as usize
    }

    pub fn is_slot_boundary(&self, tick: u64) -> bool {
        self.minislot_index(tick) == 0
    }

    pub fn is_slot_end(&self, tick: u64) -> bool {
        self.minislot_index(tick) == self.minislots_per_slot - 1
    }

    pub fn slot_ms(&self) -> f64 {
        self.minislot_ms * self.minislots_per_slot as f64
    }

    pub fn re_per_prb_minislot(&self) -> usize {
        self.subcarriers_per_prb * self.symbols_per_minislot
    }

    pub fn re_per_prb_slot(&self) -> usize {
        self.re_per_prb_minislot() * self.minislots_per_slot
    }

    /// Whole-carrier resource elements in one slot.
    pub fn re_per_slot(&self) -> usize {
        self.re_per_prb_slot() * self.prbs
    }

    pub fn ms_to_ticks(&self, ms: f64) -> u64 {
        (ms / self.minislot_ms).round() as u64
    }
}
