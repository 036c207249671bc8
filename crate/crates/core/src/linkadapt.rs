//! CQI reporting, MCS selection and transport-block decoding with HARQ.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{db_to_linear, linear_to_db};

/// Reporting grid and delay, both in mini-slot ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CqiTiming {
    pub period_ticks: u64,
    pub delay_ticks: u64,
}

impl CqiTiming {
    pub fn is_report_tick(&self, tick: u64) -> bool {
        tick > 0 && tick % self.period_ticks == 0
    }
}

/// Per-user CQI pipeline: pending reports, the last visible SU report and the
/// IIR-filtered value the scheduler reads.
#[derive(Debug, Clone, PartialEq)]
pub struct CqiState {
    xi: f64,
    mu_offset_db: f64,
    su_db: Vec<f64>,
    filtered_db: Vec<f64>,
    /// Whether the filter has seen a visible report (the first one initializes it).
    primed: bool,
    pending: VecDeque<PendingReport>,
    last_report_tick: Option<u64>,
    /// Generation tick of the most recently applied report.
    last_applied_generation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingReport {
    generated: u64,
    visible: u64,
    values_db: Vec<f64>,
}

impl CqiState {
    /// `prior_db` is what the scheduler sees until the first report becomes visible.
    pub fn new(n_subbands: usize, xi: f64, mu_offset_db: f64, prior_db: f64) -> Result<Self> {
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(SimError::Config(format!("CQI filter coefficient must lie in (0, 1], got {xi}")));
        }
        Ok(Self {
            xi,
            mu_offset_db,
            su_db: vec![prior_db; n_subbands],
            filtered_db: vec![prior_db; n_subbands],
            primed: false,
            pending: VecDeque::new(),
            last_report_tick: None,
            last_applied_generation: None,
        })
    }

    /// A state whose filter already holds `filtered_db`; later reports are smoothed into it.
    pub fn with_filter(filtered_db: Vec<f64>, xi: f64, mu_offset_db: f64) -> Result<Self> {
        let mut s = Self::new(filtered_db.len(), xi, mu_offset_db, 0.0)?;
        s.su_db.clone_from(&filtered_db);
        s.filtered_db = filtered_db;
        s.primed = true;
        Ok(s)
    }

    pub fn n_subbands(&self) -> usize {
        self.filtered_db.len()
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn mu_offset_db(&self) -> f64 {
        self.mu_offset_db
    }

    /// Filtered SU CQI of one subband, dB.
    pub fn filtered_db(&self, subband: usize) -> f64 {
        self.filtered_db[subband]
    }

    pub fn filtered(&self) -> &[f64] {
        &self.filtered_db
    }

    /// Last visible unfiltered report.
    pub fn su_db(&self, subband: usize) -> f64 {
        self.su_db[subband]
    }

    pub fn last_applied_generation(&self) -> Option<u64> {
        self.last_applied_generation
    }

    pub fn pending_reports(&self) -> usize {
        self.pending.len()
    }

    /// Enqueues a measurement if `tick` lies on the reporting grid and then
    /// applies every report whose delay has elapsed. Returns whether a report was generated.
    pub fn report(&mut self, tick: u64, measured_su_db: &[f64], timing: &CqiTiming) -> bool {
        let generated = timing.is_report_tick(tick) && self.last_report_tick.is_none_or(|t| tick > t);
        if generated {
            debug_assert_eq!(measured_su_db.len(), self.n_subbands());
            self.pending.push_back(PendingReport {
                generated: tick,
                visible: tick + timing.delay_ticks,
                values_db: measured_su_db.to_vec(),
            });
            self.last_report_tick = Some(tick);
        }
        self.advance(tick);
        generated
    }

    /// Applies all reports visible at `tick`.
    pub fn advance(&mut self, tick: u64) {
        while self.pending.front().is_some_and(|r| r.visible <= tick) {
            let r = self.pending.pop_front().expect("front checked");
            self.apply(&r.values_db);
            self.last_applied_generation = Some(r.generated);
        }
    }

    /// One IIR step `∂ ← ξΓ + (1−ξ)∂` on every subband.
    pub fn apply(&mut self, report_db: &[f64]) {
        for (sb, &gamma) in report_db.iter().enumerate() {
            self.su_db[sb] = gamma;
            self.filtered_db[sb] = if self.primed { self.xi * gamma + (1.0 - self.xi) * self.filtered_db[sb] } else { gamma };
        }
        self.primed = true;
    }
}

/// `Γ_MU = ∂ − δ` for one subband.
pub fn mu_adjusted_cqi(state: &CqiState, subband: usize) -> f64 {
    state.filtered_db(subband) - state.mu_offset_db()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: usize,
    /// Information bits per resource element.
    pub spectral_efficiency: f64,
    /// SINR at which the AWGN BLER is 10 %.
    pub threshold_db: f64,
    pub bits_per_symbol: u32,
}

impl McsEntry {
    pub fn code_rate(&self) -> f64 {
        self.spectral_efficiency / self.bits_per_symbol as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

const DEFAULT_TABLE: &str = include_str!("../data/mcs_table.csv");

/// Modulation orders considered when inferring the constellation of a table row.
const MODULATION_ORDERS: [u32; 4] = [2, 4, 6, 8];

impl McsTable {
    pub fn new(mut entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(SimError::Config("MCS table is empty".into()));
        }
        entries.sort_by_key(|e| e.index);
        for w in entries.windows(2) {
            if !(w[1].spectral_efficiency > w[0].spectral_efficiency && w[1].threshold_db > w[0].threshold_db) {
                return Err(SimError::Config(format!(
                    "MCS {} does not strictly improve on MCS {}",
                    w[1].index, w[0].index
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Parses `index, spectral_efficiency, threshold_db` records; `#` starts a comment line.
    ///
    /// The constellation of each row is the lowest order whose code rate stays
    /// below `max_code_rate`.
    pub fn parse(text: &str, source: &str, max_code_rate: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SimError::Table { path: source.to_string(), line: n + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let index = fields[0].parse::<usize>().map_err(|e| err(format!("index: {e}")))?;
            let se = fields[1].parse::<f64>().map_err(|e| err(format!("spectral_efficiency: {e}")))?;
            let th = fields[2].parse::<f64>().map_err(|e| err(format!("threshold_db: {e}")))?;
            if !(se > 0.0) || !th.is_finite() {
                return Err(err("spectral efficiency must be positive and threshold finite".into()));
            }
            let bits = MODULATION_ORDERS
                .iter()
                .copied()
                .find(|&b| se / b as f64 <= max_code_rate)
                .ok_or_else(|| err(format!("spectral efficiency {se} exceeds every supported constellation")))?;
            entries.push(McsEntry { index, spectral_efficiency: se, threshold_db: th, bits_per_symbol: bits });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path, max_code_rate: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string(), max_code_rate)
    }

    /// The built-in 15-entry table.
    pub fn standard(max_code_rate: f64) -> Self {
        Self::parse(DEFAULT_TABLE, "mcs_table.csv", max_code_rate).expect("bundled MCS table is valid")
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn lowest(&self) -> &McsEntry {
        &self.entries[0]
    }

    /// Entry by position in the table (not by its `index` label).
    pub fn get(&self, position: usize) -> &McsEntry {
        &self.entries[position]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Margin subtracted from the CQI before MCS lookup, per BLER target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerBackoff {
    /// Backoff for a 1 % target; a 10 % target needs none (table thresholds are at 10 %).
    pub db_at_1pct: f64,
}

impl BlerBackoff {
    /// Log-linear in the target: 10 % → 0 dB, 1 % → `db_at_1pct`.
    pub fn backoff_db(&self, bler_target: f64) -> f64 {
        self.db_at_1pct * (0.1 / bler_target).log10()
    }
}

impl Default for BlerBackoff {
    fn default() -> Self {
        Self { db_at_1pct: 2.0 }
    }
}

/// Returns the table position of the largest MCS whose threshold is at most
/// `cqi − backoff − olla`, or the lowest MCS when none qualifies.
pub fn select_mcs(cqi_db: f64, table: &McsTable, bler_target: f64, olla_offset_db: f64, backoff: &BlerBackoff) -> usize {
    let budget = cqi_db - backoff.backoff_db(bler_target) - olla_offset_db;
    table.entries().iter().rposition(|e| e.threshold_db <= budget).unwrap_or(0)
}

/// One (re)transmission of a transport block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub tick: u64,
    /// Mean linear SINR over the resources that survived puncturing.
    pub sinr: f64,
    /// Fraction of the block's resource elements overwritten by other traffic.
    pub punctured_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub tb_id: u64,
    pub transmissions: Vec<Transmission>,
    pub rtt_ticks: u64,
    pub max_tx: u32,
}

impl HarqProcess {
    pub fn new(tb_id: u64, rtt_ticks: u64, max_tx: u32) -> Self {
        Self { tb_id, transmissions: Vec::new(), rtt_ticks, max_tx }
    }

    pub fn tx_count(&self) -> u32 {
        self.transmissions.len() as u32
    }

    pub fn exhausted(&self) -> bool {
        self.tx_count() >= self.max_tx
    }

    /// Earliest tick at which a retransmission may go out.
    pub fn next_eligible_tick(&self) -> u64 {
        self.transmissions.last().map_or(0, |t| t.tick + self.rtt_ticks)
    }

    pub fn record(&mut self, tx: Transmission) -> Result<()> {
        if let Some(prev) = self.transmissions.last() {
            if tx.tick < prev.tick + self.rtt_ticks {
                return Err(SimError::HarqSpacing { tick: tx.tick, previous: prev.tick, rtt: self.rtt_ticks });
            }
        }
        self.transmissions.push(Transmission { punctured_fraction: tx.punctured_fraction.clamp(0.0, 1.0), ..tx });
        Ok(())
    }

    /// Chase-combined SINR: `Σ (1 − ρᵢ)·sinrᵢ`.
    pub fn effective_sinr(&self) -> f64 {
        self.transmissions.iter().map(|t| (1.0 - t.punctured_fraction) * t.sinr).sum()
    }
}

/// Link-to-system mapping: effective SINR against a logistic BLER curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerModel {
    /// Logistic slope, dB.
    pub slope_db: f64,
    /// Code rates above this cannot be decoded.
    pub max_code_rate: f64,
    /// Replace the random draw by a hard threshold at the MCS threshold.
    pub deterministic: bool,
}

impl Default for BlerModel {
    fn default() -> Self {
        Self { slope_db: 0.5, max_code_rate: 0.93, deterministic: false }
    }
}

impl BlerModel {
    /// Block error probability at `sinr_db` for an MCS whose 10 % point is `threshold_db`.
    pub fn failure_probability(&self, sinr_db: f64, threshold_db: f64) -> f64 {
        // Anchored so that the curve passes through 10 % at the table threshold.
        let x = (sinr_db - threshold_db) / self.slope_db;
        1.0 / (1.0 + 9.0 * x.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeResult {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOutcome {
    pub result: DecodeResult,
    pub effective_sinr_db: f64,
    pub effective_code_rate: f64,
    /// Probability of failure used for the draw (0 or 1 when decided deterministically).
    pub failure_probability: f64,
}

/// Decodes the block after its latest transmission.
pub fn decode_tb<R: Rng + ?Sized>(harq: &HarqProcess, mcs: &McsEntry, model: &BlerModel, rng: &mut R) -> DecodeOutcome {
    let latest = harq.transmissions.last().expect("decode_tb needs at least one transmission");
    let gamma = harq.effective_sinr();
    let gamma_db = if gamma > 0.0 { linear_to_db(gamma) } else { f64::NEG_INFINITY };
    let surviving = 1.0 - latest.punctured_fraction;
    let code_rate = if surviving > 0.0 { mcs.code_rate() / surviving } else { f64::INFINITY };
    let (p_fail, result) = if code_rate > model.max_code_rate || gamma <= 0.0 {
        (1.0, DecodeResult::Failure)
    } else if model.deterministic {
        if gamma_db >= mcs.threshold_db {
            (0.0, DecodeResult::Success)
        } else {
            (1.0, DecodeResult::Failure)
        }
    } else {
        let p = model.failure_probability(gamma_db, mcs.threshold_db);
        let failed = rng.random::<f64>() < p;
        (p, if failed { DecodeResult::Failure } else { DecodeResult::Success })
    };
    DecodeOutcome { result, effective_sinr_db: gamma_db, effective_code_rate: code_rate, failure_probability: p_fail }
}

/// Mean of linear SINRs given in dB, returned in dB.
pub fn mean_linear_db(values_db: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values_db.into_iter().fold((0.0, 0usize), |(s, n), v| (s + db_to_linear(v), n + 1));
    (n > 0).then(|| linear_to_db(sum / n as f64))
}
