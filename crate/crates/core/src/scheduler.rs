//! Per-cell, per-tick resource allocation for the five policies.
//!
//! eMBB is planned once per slot; URLLC is decided every mini-slot (except
//! under PF, which keeps URLLC on the slot TTI). Within a slot, URLLC traffic
//! that finds no free PRB is either buffered (WPF), overwrites eMBB PRBs (PS)
//! or is first offered to MU-MIMO pairing with an eMBB partner (MUPS, C-MUPS).
//!
//! Ties are always broken by lowest user id, then lowest PRB index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::carrier::Carrier;
use crate::error::{Result, SimError};
use crate::linalg::{db_to_linear, linear_to_db};
use crate::linkadapt::{select_mcs, BlerBackoff, CqiState, McsTable};
use crate::phy::{angle_separation, chordal_distance, zero_forcing, Precoder};
use crate::traffic::TrafficClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Pf,
    Wpf,
    Ps,
    Mups,
    Cmups,
}

impl Policy {
    pub const ALL: [Policy; 5] = [Policy::Pf, Policy::Wpf, Policy::Ps, Policy::Mups, Policy::Cmups];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Pf => "pf",
            Policy::Wpf => "wpf",
            Policy::Ps => "ps",
            Policy::Mups => "mups",
            Policy::Cmups => "cmups",
        }
    }

    pub fn pairing_mode(self) -> Option<PairingMode> {
        match self {
            Policy::Mups => Some(PairingMode::Mups),
            Policy::Cmups => Some(PairingMode::Cmups),
            _ => None,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::Config(format!("unknown policy {s:?} (expected pf, wpf, ps, mups or cmups)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    Mups,
    /// MUPS plus a minimum principal angle between the paired precoders.
    Cmups,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerWeights {
    pub alpha_urllc: f64,
    pub alpha_embb: f64,
}

impl Default for SchedulerWeights {
    fn default() -> Self {
        Self { alpha_urllc: 100.0, alpha_embb: 1.0 }
    }
}

impl SchedulerWeights {
    /// URLLC must dominate: `α_urllc ≥ 10·α_embb > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_embb > 0.0) || !(self.alpha_urllc >= 10.0 * self.alpha_embb) {
            return Err(SimError::Config(format!(
                "scheduler weights need alpha_urllc >= 10 * alpha_embb > 0, got {} and {}",
                self.alpha_urllc, self.alpha_embb
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, class: TrafficClass) -> f64 {
        match class {
            TrafficClass::Urllc => self.alpha_urllc,
            TrafficClass::Embb => self.alpha_embb,
        }
    }
}

/// `Θ_PF = r / r̄`.
pub fn pf_metric(inst_rate: f64, avg_rate: f64) -> f64 {
    debug_assert!(avg_rate > 0.0);
    inst_rate / avg_rate
}

/// `Θ_WPF = α_class · r / r̄`.
pub fn wpf_metric(inst_rate: f64, avg_rate: f64, weights: &SchedulerWeights, class: TrafficClass) -> f64 {
    pf_metric(inst_rate, avg_rate) * weights.alpha(class)
}

/// Exponential average over `horizon` TTIs.
pub fn update_avg_rate(avg_rate: f64, delivered_rate: f64, horizon: f64) -> f64 {
    debug_assert!(horizon >= 1.0);
    avg_rate + (delivered_rate - avg_rate) / horizon
}

/// PRBs needed to carry `bits` in one mini-slot at spectral efficiency `mcs_se`.
pub fn compute_prb_demand(bits: u64, mcs_se: f64, symbols_per_minislot: usize, subcarriers_per_prb: usize) -> usize {
    debug_assert!(mcs_se > 0.0);
    (bits as f64 / (mcs_se * (subcarriers_per_prb * symbols_per_minislot) as f64)).ceil() as usize
}

/// Instantaneous per-PRB rate the schedulers rank by, from a CQI in dB.
pub fn cqi_rate(cqi_db: f64) -> f64 {
    (1.0 + db_to_linear(cqi_db)).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Su,
    Mu,
    Preempting,
    /// Punctured eMBB transmission; kept for damage accounting, does not radiate.
    Victim,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    /// Index of the user inside its cell.
    pub user: usize,
    pub user_id: usize,
    /// Carries its power in its norm.
    pub precoder: Precoder,
    pub mcs: usize,
    pub kind: EntryKind,
}

impl GridEntry {
    pub fn radiates(&self) -> bool {
        self.kind != EntryKind::Victim
    }
}

/// Everything one cell transmits in one mini-slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleGrid {
    pub cell_id: usize,
    pub tick: u64,
    pub prbs: Vec<Vec<GridEntry>>,
    /// Nominal per-PRB power, split equally among co-scheduled users.
    pub power_budget: f64,
}

impl ScheduleGrid {
    pub fn empty(cell_id: usize, tick: u64, n_prb: usize, power_budget: f64) -> Self {
        Self { cell_id, tick, prbs: vec![Vec::new(); n_prb], power_budget }
    }

    pub fn active(&self, prb: usize) -> impl Iterator<Item = &GridEntry> {
        self.prbs[prb].iter().filter(|e| e.radiates())
    }

    /// Checks co-scheduling rank, victim bookkeeping and one MCS per user.
    pub fn validate(&self, mu_rank: usize) -> Result<()> {
        let fail = |what: String| Err(SimError::InvariantViolation { cell: self.cell_id, tick: self.tick, what });
        let mut mcs_of: Vec<(usize, usize)> = Vec::new();
        for (prb, entries) in self.prbs.iter().enumerate() {
            let active = entries.iter().filter(|e| e.radiates()).count();
            if active > mu_rank {
                return fail(format!("PRB {prb} carries {active} users, MU rank is {mu_rank}"));
            }
            let victims = entries.iter().filter(|e| e.kind == EntryKind::Victim).count();
            let preempting = entries.iter().filter(|e| e.kind == EntryKind::Preempting).count();
            if victims > 0 && preempting == 0 {
                return fail(format!("PRB {prb} has a victim without a preempting transmission"));
            }
            for e in entries {
                match mcs_of.iter().find(|(u, _)| *u == e.user) {
                    Some(&(_, m)) if m != e.mcs => {
                        return fail(format!("user {} holds MCS {m} and {}", e.user_id, e.mcs));
                    }
                    Some(_) => {}
                    None => mcs_of.push((e.user, e.mcs)),
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingOutcome {
    Paired,
    Preempted,
    ScheduledFree,
}

impl PairingOutcome {
    pub fn name(self) -> &'static str {
        match self {
            PairingOutcome::Paired => "paired",
            PairingOutcome::Preempted => "preempted",
            PairingOutcome::ScheduledFree => "scheduled_free",
        }
    }
}

/// How one URLLC transmission got its resources.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingDecision {
    pub tick: u64,
    pub cell: usize,
    pub urllc_user: usize,
    pub embb_partner: Option<usize>,
    pub chordal: Option<f64>,
    pub angle_deg: Option<f64>,
    pub outcome: PairingOutcome,
    /// PRBs this decision covers (shared PRBs for a pairing).
    pub prbs: Vec<usize>,
}

/// An eMBB partner candidate: the precoder pairs on every subband the pair would share.
#[derive(Debug, Clone)]
pub struct PartnerCandidate<'a> {
    pub user_id: usize,
    /// `(urllc, embb)` precoders, one pair per shared subband.
    pub pairs: Vec<(&'a Precoder, &'a Precoder)>,
}

/// Worst-case spatial compatibility of a candidate over its shared subbands.
#[derive(Debug, Clone, PartialEq)]
pub struct PartnerScore {
    pub chordal: f64,
    pub angle_deg: f64,
    /// Zero-forced `(urllc, embb)` columns per shared subband, if every stack had full rank.
    pub zf: Option<Vec<(Precoder, Precoder)>>,
}

pub fn evaluate_partner(candidate: &PartnerCandidate<'_>, power_budget: f64) -> PartnerScore {
    let mut chordal = 1.0_f64;
    let mut angle = 90.0_f64;
    let mut zf = Some(Vec::with_capacity(candidate.pairs.len()));
    for &(u, e) in &candidate.pairs {
        chordal = chordal.min(chordal_distance(u, e));
        angle = angle.min(angle_separation(u, e));
        if let Some(cols) = zf.as_mut() {
            match zero_forcing(&[u.clone(), e.clone()], power_budget) {
                Ok(mut v) => {
                    let embb = v.pop().expect("two columns");
                    let urllc = v.pop().expect("two columns");
                    cols.push((urllc, embb));
                }
                Err(_) => zf = None,
            }
        }
    }
    PartnerScore { chordal, angle_deg: angle, zf }
}

/// Whether a scored partner passes the pairing gates.
pub fn accepts(score: &PartnerScore, mode: PairingMode, theta_deg: f64, d_min: f64) -> bool {
    score.chordal >= d_min && (mode == PairingMode::Mups || score.angle_deg >= theta_deg) && score.zf.is_some()
}

/// Single-partner pairing: the candidate with the largest chordal distance that passes the gates.
///
/// On failure the outcome is `Preempted` and the best-ranked candidate (if any) is reported.
pub fn try_mu_pairing(
    tick: u64,
    cell: usize,
    urllc_user: usize,
    candidates: &[PartnerCandidate<'_>],
    mode: PairingMode,
    theta_deg: f64,
    d_min: f64,
    power_budget: f64,
) -> PairingDecision {
    let mut scored: Vec<(usize, PartnerScore)> =
        candidates.iter().enumerate().map(|(i, c)| (i, evaluate_partner(c, power_budget))).collect();
    scored.sort_by(|a, b| rank_partners((a.1.chordal, candidates[a.0].user_id), (b.1.chordal, candidates[b.0].user_id)));
    let chosen = scored.iter().find(|(_, s)| accepts(s, mode, theta_deg, d_min)).or(scored.first());
    let outcome = match chosen {
        Some((_, s)) if accepts(s, mode, theta_deg, d_min) => PairingOutcome::Paired,
        _ => PairingOutcome::Preempted,
    };
    PairingDecision {
        tick,
        cell,
        urllc_user,
        embb_partner: chosen.map(|(i, _)| candidates[*i].user_id),
        chordal: chosen.map(|(_, s)| s.chordal),
        angle_deg: chosen.map(|(_, s)| s.angle_deg),
        outcome,
        prbs: Vec::new(),
    }
}

/// Descending chordal distance, then ascending user id.
fn rank_partners(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `demand` PRBs with the best filtered CQI among `eligible` ones, best first.
pub fn select_preemption_targets(cqi: &CqiState, carrier: &Carrier, demand: usize, eligible: &[bool]) -> Vec<usize> {
    let mut prbs = ranked_prbs(cqi, carrier, |p| eligible[p]);
    prbs.truncate(demand);
    prbs
}

/// PRBs passing `keep`, ordered by descending filtered CQI, then ascending index.
fn ranked_prbs(cqi: &CqiState, carrier: &Carrier, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut prbs: Vec<usize> = (0..carrier.prbs).filter(|&p| keep(p)).collect();
    prbs.sort_by(|&a, &b| {
        cqi.filtered_db(carrier.subband_of(b)).total_cmp(&cqi.filtered_db(carrier.subband_of(a))).then(a.cmp(&b))
    });
    prbs
}

/// Static per-run scheduler parameters.
#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub carrier: Carrier,
    pub weights: SchedulerWeights,
    pub mu_rank: usize,
    pub d_min: f64,
    pub theta_deg: f64,
    pub urllc_bler_target: f64,
    pub embb_bler_target: f64,
    pub backoff: BlerBackoff,
    pub olla_offset_db: f64,
    pub power_budget: f64,
    pub mcs: McsTable,
}

impl SchedulerConfig {
    fn bler_target(&self, class: TrafficClass) -> f64 {
        match class {
            TrafficClass::Urllc => self.urllc_bler_target,
            TrafficClass::Embb => self.embb_bler_target,
        }
    }

    fn mcs_for(&self, class: TrafficClass, cqi_db: f64) -> usize {
        select_mcs(cqi_db, &self.mcs, self.bler_target(class), self.olla_offset_db, &self.backoff)
    }

    /// Information bits of `n_prb` PRBs at MCS `mcs` over one mini-slot or one slot.
    pub fn capacity_bits(&self, mcs: usize, n_prb: usize, slot_tti: bool) -> u64 {
        let re = if slot_tti { self.carrier.re_per_prb_slot() } else { self.carrier.re_per_prb_minislot() };
        (self.mcs.get(mcs).spectral_efficiency * (re * n_prb) as f64).floor() as u64
    }
}

/// Scheduler-visible view of one user.
#[derive(Debug, Clone)]
pub struct SchedUser {
    pub id: usize,
    pub class: TrafficClass,
    pub cqi: CqiState,
    /// PF average delivered rate, bits per resource element.
    pub avg_rate: f64,
    /// Latest SU precoder feedback, one per subband.
    pub precoders: Vec<Precoder>,
}

/// A pending retransmission: original bits and MCS, and the PRB count it went out on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Retx {
    pub tb: u64,
    pub mcs: usize,
    pub bits: u64,
    pub n_prb: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demand {
    Retx(Retx),
    /// Fresh data; may be served partially (segmented).
    New { bits: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UrllcDemand {
    pub user: usize,
    pub demand: Demand,
}

/// A transport block occupying its PRBs for a whole slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTb {
    pub user: usize,
    pub class: TrafficClass,
    pub mcs: usize,
    pub prbs: Vec<usize>,
    pub bits: u64,
    pub retx: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotPlan {
    pub slot: u64,
    pub tbs: Vec<SlotTb>,
    /// PRB → index into `tbs`.
    pub owner: Vec<Option<usize>>,
}

impl SlotPlan {
    pub fn idle(slot: u64, n_prb: usize) -> Self {
        Self { slot, tbs: Vec::new(), owner: vec![None; n_prb] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrbUse {
    Free,
    /// Shared with the eMBB user at this cell index.
    Shared { partner: usize },
    /// Overwrites the eMBB user at this cell index.
    Preempt { victim: usize },
}

/// A URLLC transport block sent in one mini-slot.
#[derive(Debug, Clone, PartialEq)]
pub struct UrllcTx {
    pub user: usize,
    pub retx: Option<u64>,
    pub mcs: usize,
    pub bits: u64,
    pub prbs: Vec<(usize, PrbUse)>,
}

/// Per-cell state the scheduler reads.
#[derive(Debug, Clone)]
pub struct CellState {
    pub cell_id: usize,
    pub users: Vec<SchedUser>,
    /// At most one entry per URLLC user.
    pub urllc_demand: Vec<UrllcDemand>,
    /// Retransmission due for each eMBB user at the coming slot boundary.
    pub embb_retx: Vec<Option<Retx>>,
    /// Plan of the slot in progress.
    pub plan: SlotPlan,
}

impl CellState {
    pub fn new(cell_id: usize, users: Vec<SchedUser>, n_prb: usize) -> Self {
        let n = users.len();
        Self { cell_id, users, urllc_demand: Vec::new(), embb_retx: vec![None; n], plan: SlotPlan::idle(0, n_prb) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickSchedule {
    pub grid: ScheduleGrid,
    pub decisions: Vec<PairingDecision>,
    /// New slot plan, produced at slot boundaries.
    pub plan: Option<SlotPlan>,
    pub urllc: Vec<UrllcTx>,
    /// URLLC transmissions that overwrote at least one eMBB PRB.
    pub preemptions: usize,
    /// URLLC transmissions offered to MU pairing, and how many were paired.
    pub pairing_attempts: usize,
    pub pairing_successes: usize,
}

/// Grows a URLLC allocation one PRB at a time until its demand is covered.
#[derive(Clone)]
struct Fill<'a> {
    cfg: &'a SchedulerConfig,
    user: usize,
    cqi: &'a CqiState,
    demand: Demand,
    slot_tti: bool,
    prbs: Vec<(usize, PrbUse)>,
    linear_sum: f64,
}

impl<'a> Fill<'a> {
    fn new(cfg: &'a SchedulerConfig, user: usize, cqi: &'a CqiState, demand: Demand, slot_tti: bool) -> Self {
        Self { cfg, user, cqi, demand, slot_tti, prbs: Vec::new(), linear_sum: 0.0 }
    }

    fn prb_cqi_db(&self, prb: usize, usage: PrbUse) -> f64 {
        let sb = self.cfg.carrier.subband_of(prb);
        match usage {
            PrbUse::Shared { .. } => self.cqi.filtered_db(sb) - self.cqi.mu_offset_db(),
            _ => self.cqi.filtered_db(sb),
        }
    }

    fn push(&mut self, prb: usize, usage: PrbUse) {
        self.linear_sum += db_to_linear(self.prb_cqi_db(prb, usage));
        self.prbs.push((prb, usage));
    }

    fn mcs(&self) -> usize {
        match self.demand {
            Demand::Retx(r) => r.mcs,
            Demand::New { .. } => {
                let mean = self.linear_sum / self.prbs.len().max(1) as f64;
                self.cfg.mcs_for(TrafficClass::Urllc, linear_to_db(mean))
            }
        }
    }

    fn satisfied(&self) -> bool {
        match self.demand {
            Demand::Retx(r) => self.prbs.len() >= r.n_prb,
            Demand::New { bits } => {
                !self.prbs.is_empty() && self.cfg.capacity_bits(self.mcs(), self.prbs.len(), self.slot_tti) >= bits
            }
        }
    }

    /// Adds PRBs from `source` until satisfied; returns whether it is.
    fn extend(&mut self, source: impl IntoIterator<Item = (usize, PrbUse)>) -> bool {
        for (prb, usage) in source {
            if self.satisfied() {
                break;
            }
            self.push(prb, usage);
        }
        self.satisfied()
    }

    /// Whether what has been gathered can go out (possibly as a segment).
    fn transmittable(&self) -> bool {
        match self.demand {
            Demand::Retx(_) => self.satisfied(),
            Demand::New { .. } => !self.prbs.is_empty(),
        }
    }

    fn into_tx(self) -> UrllcTx {
        let mcs = self.mcs();
        let (retx, bits) = match self.demand {
            Demand::Retx(r) => (Some(r.tb), r.bits),
            Demand::New { bits } => (None, bits.min(self.cfg.capacity_bits(mcs, self.prbs.len(), self.slot_tti))),
        };
        UrllcTx { user: self.user, retx, mcs, bits, prbs: self.prbs }
    }
}

/// Schedules one cell for one mini-slot.
pub fn schedule_tick(state: &CellState, tick: u64, cfg: &SchedulerConfig) -> Result<TickSchedule> {
    let carrier = &cfg.carrier;
    let boundary = carrier.is_slot_boundary(tick);
    let slot = carrier.slot_of(tick);
    let mut out = TickSchedule {
        grid: ScheduleGrid::empty(state.cell_id, tick, carrier.prbs, cfg.power_budget),
        decisions: Vec::new(),
        plan: None,
        urllc: Vec::new(),
        preemptions: 0,
        pairing_attempts: 0,
        pairing_successes: 0,
    };

    let mut zf_beams: Vec<(usize, Precoder, Precoder)> = Vec::new();
    if cfg.policy == Policy::Pf {
        if boundary {
            out.plan = Some(plan_slot(state, slot, cfg, true, &vec![false; carrier.prbs]));
        }
    } else if boundary {
        let idle = SlotPlan::idle(slot, carrier.prbs);
        schedule_urllc(state, tick, &idle, cfg, &mut out, &mut zf_beams);
        let mut reserved = vec![false; carrier.prbs];
        for tx in &out.urllc {
            for &(p, _) in &tx.prbs {
                reserved[p] = true;
            }
        }
        out.plan = Some(plan_slot(state, slot, cfg, false, &reserved));
    } else {
        schedule_urllc(state, tick, &state.plan, cfg, &mut out, &mut zf_beams);
    }

    let plan = out.plan.as_ref().unwrap_or(&state.plan);
    fill_grid(state, plan, &out.urllc, &zf_beams, cfg, &mut out.grid);
    out.grid.validate(cfg.mu_rank)?;
    Ok(out)
}

/// PF over the slot's PRBs: eMBB always, URLLC too when `with_urllc` (slot TTI).
fn plan_slot(state: &CellState, slot: u64, cfg: &SchedulerConfig, with_urllc: bool, reserved: &[bool]) -> SlotPlan {
    let carrier = &cfg.carrier;
    let urllc_demand = |u: usize| state.urllc_demand.iter().find(|d| d.user == u).map(|d| d.demand);
    let metric = |u: usize, sb: usize| {
        let user = &state.users[u];
        pf_metric(cqi_rate(user.cqi.filtered_db(sb)), user.avg_rate)
    };
    // PF greedy over (metric, user id, PRB) on the PRBs not yet taken.
    let ranked = |users: &[usize], taken: &[bool]| {
        let mut items: Vec<(f64, usize, usize)> = Vec::with_capacity(users.len() * carrier.prbs);
        for &u in users {
            for sb in 0..carrier.n_subbands() {
                let m = metric(u, sb);
                items.extend(carrier.subband_prb_range(sb).filter(|&p| !taken[p]).map(|p| (m, u, p)));
            }
        }
        items.sort_by(|a, b| b.0.total_cmp(&a.0).then(state.users[a.1].id.cmp(&state.users[b.1].id)).then(a.2.cmp(&b.2)));
        items
    };

    // URLLC first; a user whose demand cannot be met is dropped from the slot and the pass re-run.
    let mut urllc: Vec<usize> = if with_urllc {
        (0..state.users.len()).filter(|&u| state.users[u].class == TrafficClass::Urllc && urllc_demand(u).is_some()).collect()
    } else {
        Vec::new()
    };
    let (mut taken, mut fills) = loop {
        let mut taken = reserved.to_vec();
        let mut fills: Vec<Option<Fill<'_>>> = (0..state.users.len()).map(|_| None).collect();
        for (_, u, p) in ranked(&urllc, &taken) {
            if taken[p] {
                continue;
            }
            let fill = fills[u].get_or_insert_with(|| {
                Fill::new(cfg, u, &state.users[u].cqi, urllc_demand(u).expect("candidate has demand"), true)
            });
            if fill.satisfied() {
                continue;
            }
            fill.push(p, PrbUse::Free);
            taken[p] = true;
        }
        let short: Vec<usize> = urllc.iter().copied().filter(|&u| fills[u].as_ref().is_some_and(|f| !f.transmittable())).collect();
        if short.is_empty() {
            break (taken, fills);
        }
        urllc.retain(|u| !short.contains(u));
    };

    // eMBB retransmissions take exactly their original PRB count, best CQI first, or sit the slot out.
    let mut embb_prbs: Vec<Vec<usize>> = vec![Vec::new(); state.users.len()];
    let mut retx_users: Vec<(f64, usize)> = (0..state.users.len())
        .filter(|&u| state.users[u].class == TrafficClass::Embb && state.embb_retx[u].is_some())
        .map(|u| {
            let wideband = (0..carrier.n_subbands()).map(|sb| metric(u, sb)).sum::<f64>() / carrier.n_subbands() as f64;
            (wideband, u)
        })
        .collect();
    retx_users.sort_by(|a, b| b.0.total_cmp(&a.0).then(state.users[a.1].id.cmp(&state.users[b.1].id)));
    for &(_, u) in &retx_users {
        let need = state.embb_retx[u].expect("filtered").n_prb;
        let mut free: Vec<usize> = (0..carrier.prbs).filter(|&p| !taken[p]).collect();
        if free.len() < need {
            continue;
        }
        let cqi = &state.users[u].cqi;
        free.sort_by(|&a, &b| cqi.filtered_db(carrier.subband_of(b)).total_cmp(&cqi.filtered_db(carrier.subband_of(a))).then(a.cmp(&b)));
        free.truncate(need);
        for &p in &free {
            taken[p] = true;
        }
        embb_prbs[u] = free;
    }

    // New eMBB data on what is left.
    let fresh: Vec<usize> =
        (0..state.users.len()).filter(|&u| state.users[u].class == TrafficClass::Embb && state.embb_retx[u].is_none()).collect();
    for (_, u, p) in ranked(&fresh, &taken) {
        if !taken[p] {
            embb_prbs[u].push(p);
            taken[p] = true;
        }
    }

    let mut plan = SlotPlan::idle(slot, carrier.prbs);
    for u in 0..state.users.len() {
        let tb = match state.users[u].class {
            TrafficClass::Embb if !embb_prbs[u].is_empty() => {
                let prbs = std::mem::take(&mut embb_prbs[u]);
                embb_tb(state, u, prbs, cfg)
            }
            TrafficClass::Urllc => match fills[u].take() {
                Some(f) if f.transmittable() => {
                    let tx = f.into_tx();
                    SlotTb {
                        user: u,
                        class: TrafficClass::Urllc,
                        mcs: tx.mcs,
                        prbs: tx.prbs.into_iter().map(|(p, _)| p).collect(),
                        bits: tx.bits,
                        retx: tx.retx,
                    }
                }
                _ => continue,
            },
            _ => continue,
        };
        let idx = plan.tbs.len();
        for &p in &tb.prbs {
            plan.owner[p] = Some(idx);
        }
        plan.tbs.push(tb);
    }
    for tb in &mut plan.tbs {
        tb.prbs.sort_unstable();
    }
    plan
}

fn embb_tb(state: &CellState, u: usize, prbs: Vec<usize>, cfg: &SchedulerConfig) -> SlotTb {
    match state.embb_retx[u] {
        Some(r) => SlotTb { user: u, class: TrafficClass::Embb, mcs: r.mcs, prbs, bits: r.bits, retx: Some(r.tb) },
        None => {
            let cqi = &state.users[u].cqi;
            let mean = prbs.iter().map(|&p| db_to_linear(cqi.filtered_db(cfg.carrier.subband_of(p)))).sum::<f64>()
                / prbs.len() as f64;
            let mcs = cfg.mcs_for(TrafficClass::Embb, linear_to_db(mean));
            let bits = cfg.capacity_bits(mcs, prbs.len(), true);
            SlotTb { user: u, class: TrafficClass::Embb, mcs, prbs, bits, retx: None }
        }
    }
}

/// Mini-slot URLLC allocation against the eMBB occupancy in `plan`.
fn schedule_urllc(
    state: &CellState,
    tick: u64,
    plan: &SlotPlan,
    cfg: &SchedulerConfig,
    out: &mut TickSchedule,
    zf_beams: &mut Vec<(usize, Precoder, Precoder)>,
) {
    let carrier = &cfg.carrier;
    let mut order: Vec<(f64, &UrllcDemand)> = state
        .urllc_demand
        .iter()
        .map(|d| {
            let user = &state.users[d.user];
            let best = user.cqi.filtered().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (wpf_metric(cqi_rate(best), user.avg_rate, &cfg.weights, TrafficClass::Urllc), d)
        })
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(state.users[a.1.user].id.cmp(&state.users[b.1.user].id)));

    // PRBs already claimed by a URLLC transmission this mini-slot.
    let mut used = vec![false; carrier.prbs];
    for (_, d) in order {
        let user = &state.users[d.user];
        let free = ranked_prbs(&user.cqi, carrier, |p| plan.owner[p].is_none() && !used[p]);
        let mut fill = Fill::new(cfg, d.user, &user.cqi, d.demand, false);
        let mut decision = PairingDecision {
            tick,
            cell: state.cell_id,
            urllc_user: user.id,
            embb_partner: None,
            chordal: None,
            angle_deg: None,
            outcome: PairingOutcome::ScheduledFree,
            prbs: Vec::new(),
        };

        let covered = fill.extend(free.iter().map(|&p| (p, PrbUse::Free)));
        let preemptive = match cfg.policy {
            _ if covered => false,
            Policy::Pf | Policy::Wpf => false,
            Policy::Ps => true,
            Policy::Mups | Policy::Cmups => {
                let mode = cfg.policy.pairing_mode().expect("pairing policy");
                if plan.tbs.iter().any(|tb| tb.class == TrafficClass::Embb) {
                    out.pairing_attempts += 1;
                    match pair(state, tick, plan, &used, mode, cfg, fill.clone()) {
                        Ok((paired, decisions, beams)) => {
                            out.pairing_successes += 1;
                            out.decisions.extend(decisions);
                            zf_beams.extend(beams);
                            commit(paired.into_tx(), &mut used, out);
                            continue;
                        }
                        Err(best) => {
                            if let Some((partner, chordal, angle)) = best {
                                decision.embb_partner = Some(partner);
                                decision.chordal = Some(chordal);
                                decision.angle_deg = Some(angle);
                            }
                        }
                    }
                }
                true
            }
        };
        if preemptive {
            preempt(plan, &used, cfg, &mut fill);
        }
        if fill.transmittable() {
            if fill.prbs.iter().any(|(_, u)| matches!(u, PrbUse::Preempt { .. })) {
                decision.outcome = PairingOutcome::Preempted;
            }
            decision.prbs = fill.prbs.iter().map(|&(p, _)| p).collect();
            out.decisions.push(decision);
            commit(fill.into_tx(), &mut used, out);
        }
    }
}

fn commit(tx: UrllcTx, used: &mut [bool], out: &mut TickSchedule) {
    for &(p, _) in &tx.prbs {
        used[p] = true;
    }
    if tx.prbs.iter().any(|(_, u)| matches!(u, PrbUse::Preempt { .. })) {
        out.preemptions += 1;
    }
    out.urllc.push(tx);
}

/// Tops `fill` up by overwriting the best-CQI eMBB PRBs.
fn preempt(plan: &SlotPlan, used: &[bool], cfg: &SchedulerConfig, fill: &mut Fill<'_>) {
    let eligible: Vec<bool> = (0..cfg.carrier.prbs).map(|p| plan.owner[p].is_some() && !used[p]).collect();
    let targets = select_preemption_targets(fill.cqi, &cfg.carrier, cfg.carrier.prbs, &eligible);
    fill.extend(targets.into_iter().map(|p| {
        let victim = plan.tbs[plan.owner[p].expect("eligible PRBs are owned")].user;
        (p, PrbUse::Preempt { victim })
    }));
}

type PairingResult<'a> = std::result::Result<
    (Fill<'a>, Vec<PairingDecision>, Vec<(usize, Precoder, Precoder)>),
    Option<(usize, f64, f64)>,
>;

/// Multi-partner MU pairing. All or nothing: the URLLC demand must be covered by
/// free PRBs plus PRBs shared with accepted partners.
#[allow(clippy::too_many_arguments)]
fn pair<'a>(
    state: &'a CellState,
    tick: u64,
    plan: &SlotPlan,
    used: &[bool],
    mode: PairingMode,
    cfg: &'a SchedulerConfig,
    mut fill: Fill<'a>,
) -> PairingResult<'a> {
    let carrier = &cfg.carrier;
    let urllc = &state.users[fill.user];

    struct Partner {
        user: usize,
        prbs: Vec<usize>,
        subbands: Vec<usize>,
        score: PartnerScore,
    }
    let mut partners: Vec<Partner> = Vec::new();
    for tb in plan.tbs.iter().filter(|tb| tb.class == TrafficClass::Embb) {
        let prbs: Vec<usize> = tb.prbs.iter().copied().filter(|&p| !used[p]).collect();
        if prbs.is_empty() {
            continue;
        }
        let mut subbands: Vec<usize> = prbs.iter().map(|&p| carrier.subband_of(p)).collect();
        subbands.dedup();
        let embb = &state.users[tb.user];
        let candidate = PartnerCandidate {
            user_id: embb.id,
            pairs: subbands.iter().map(|&sb| (&urllc.precoders[sb], &embb.precoders[sb])).collect(),
        };
        let score = evaluate_partner(&candidate, cfg.power_budget);
        partners.push(Partner { user: tb.user, prbs, subbands, score });
    }
    partners.sort_by(|a, b| rank_partners((a.score.chordal, state.users[a.user].id), (b.score.chordal, state.users[b.user].id)));
    let best = partners.first().map(|p| (state.users[p.user].id, p.score.chordal, p.score.angle_deg));

    let mut accepted: Vec<usize> = Vec::new();
    for (i, partner) in partners.iter().enumerate() {
        if partner.score.chordal < cfg.d_min {
            break;
        }
        if !accepts(&partner.score, mode, cfg.theta_deg, cfg.d_min) {
            continue;
        }
        accepted.push(i);
        let mut shared = partner.prbs.clone();
        shared.sort_by(|&a, &b| {
            let (ca, cb) = (urllc.cqi.filtered_db(carrier.subband_of(a)), urllc.cqi.filtered_db(carrier.subband_of(b)));
            cb.total_cmp(&ca).then(a.cmp(&b))
        });
        if fill.extend(shared.into_iter().map(|p| (p, PrbUse::Shared { partner: partner.user }))) {
            break;
        }
    }
    if !fill.satisfied() {
        return Err(best);
    }

    let mut decisions = Vec::new();
    let mut beams = Vec::new();
    for &i in &accepted {
        let partner = &partners[i];
        let prbs: Vec<usize> = fill
            .prbs
            .iter()
            .filter(|(_, use_)| *use_ == PrbUse::Shared { partner: partner.user })
            .map(|&(p, _)| p)
            .collect();
        if prbs.is_empty() {
            continue;
        }
        let zf = partner.score.zf.as_ref().expect("accepted partners have ZF beams");
        for &p in &prbs {
            let k = partner.subbands.iter().position(|&sb| sb == carrier.subband_of(p)).expect("shared subband");
            beams.push((p, zf[k].0.clone(), zf[k].1.clone()));
        }
        decisions.push(PairingDecision {
            tick,
            cell: state.cell_id,
            urllc_user: urllc.id,
            embb_partner: Some(state.users[partner.user].id),
            chordal: Some(partner.score.chordal),
            angle_deg: Some(partner.score.angle_deg),
            outcome: PairingOutcome::Paired,
            prbs,
        });
    }
    Ok((fill, decisions, beams))
}

fn fill_grid(
    state: &CellState,
    plan: &SlotPlan,
    urllc: &[UrllcTx],
    zf_beams: &[(usize, Precoder, Precoder)],
    cfg: &SchedulerConfig,
    grid: &mut ScheduleGrid,
) {
    let carrier = &cfg.carrier;
    for tb in &plan.tbs {
        let user = &state.users[tb.user];
        for &p in &tb.prbs {
            grid.prbs[p].push(GridEntry {
                user: tb.user,
                user_id: user.id,
                precoder: user.precoders[carrier.subband_of(p)].clone(),
                mcs: tb.mcs,
                kind: EntryKind::Su,
            });
        }
    }
    for tx in urllc {
        let user = &state.users[tx.user];
        for &(p, usage) in &tx.prbs {
            let mut entry = GridEntry {
                user: tx.user,
                user_id: user.id,
                precoder: user.precoders[carrier.subband_of(p)].clone(),
                mcs: tx.mcs,
                kind: EntryKind::Su,
            };
            match usage {
                PrbUse::Free => {}
                PrbUse::Shared { partner } => {
                    let (_, v_u, v_e) = zf_beams.iter().find(|(q, _, _)| *q == p).expect("shared PRB has ZF beams");
                    entry.precoder = v_u.clone();
                    entry.kind = EntryKind::Mu;
                    let e = grid.prbs[p].iter_mut().find(|e| e.user == partner).expect("partner holds the PRB");
                    e.precoder = v_e.clone();
                    e.kind = EntryKind::Mu;
                }
                PrbUse::Preempt { victim } => {
                    entry.kind = EntryKind::Preempting;
                    let e = grid.prbs[p].iter_mut().find(|e| e.user == victim).expect("victim holds the PRB");
                    e.kind = EntryKind::Victim;
                }
            }
            grid.prbs[p].push(entry);
        }
    }
}
