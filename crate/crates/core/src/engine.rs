//! The mini-slot simulation loop.
//!
//! Each tick runs: arrivals, deadline expiry, CQI pipeline, per-cell
//! scheduling, SINR evaluation against every other cell's grid of the same
//! tick, decoding, and metric accumulation. Schedulers only ever see filtered,
//! delayed CQI; the SINR that decides decoding comes from the true concurrent grids.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::{dual_codebook, macro_pathloss_db, quantize_dual_codebook, svd_feedback, ChannelMatrix, CorrelatedRayleigh, LinkGeometry};
use crate::config::{hex_rings, Omega, SimConfig};
use crate::error::{Result, SimError};
use crate::linalg::{linear_to_db, CMatrix, CVector};
use crate::linkadapt::{decode_tb, BlerModel, CqiState, CqiTiming, DecodeResult, HarqProcess, McsTable, Transmission};
use crate::phy::prb_rate;
use crate::scheduler::{
    schedule_tick, update_avg_rate, CellState, Demand, EntryKind, PairingDecision, PairingOutcome, Policy, Retx,
    SchedUser, SchedulerConfig, ScheduleGrid, SlotPlan, UrllcDemand,
};
use crate::traffic::{generate_arrivals, record_delivery, ArrivalTrace, Packet, TraceRecord, TrafficClass, TrafficProfile};

/// Independent random streams of one drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Geometry = 1,
    Channel = 2,
    Traffic = 3,
    Decode = 4,
}

/// Stream `tag` of drop `drop` under `seed`. Traffic streams do not depend on the policy.
pub fn stream_rng(seed: u64, drop: usize, tag: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((drop as u64) << 8) | tag as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSite {
    pub id: usize,
    pub site: usize,
    pub position: (f64, f64),
    pub boresight_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPlacement {
    pub id: usize,
    pub cell: usize,
    pub class: TrafficClass,
    pub position: (f64, f64),
    /// Large-scale link to every cell.
    pub links: Vec<LinkGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub cells: Vec<CellSite>,
    pub users: Vec<UserPlacement>,
    pub wraparound: bool,
}

impl Deployment {
    pub fn users_of(&self, cell: usize) -> impl Iterator<Item = &UserPlacement> {
        self.users.iter().filter(move |u| u.cell == cell)
    }

    /// Wideband geometry SINR `g_s / (1 + Σ g_j)` of a user.
    pub fn geometry_sinr(&self, user: usize) -> f64 {
        let u = &self.users[user];
        let serving = u.links[u.cell].linear_gain();
        let interference: f64 =
            u.links.iter().enumerate().filter(|&(c, _)| c != u.cell).map(|(_, l)| l.linear_gain()).sum();
        serving / (1.0 + interference)
    }
}

/// Sector antenna attenuation at `offset_deg` from boresight.
pub fn sector_gain_db(offset_deg: f64, beamwidth_deg: f64, max_attenuation_db: f64) -> f64 {
    -(12.0 * (offset_deg / beamwidth_deg).powi(2)).min(max_attenuation_db)
}

fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Hexagonal site grid with three 120° sectors per site.
fn layout(cells: usize, isd: f64) -> (Vec<CellSite>, Vec<(f64, f64)>) {
    let sites = cells.div_ceil(3);
    let rings = (0..).find(|&n| 3 * n * n + 3 * n + 1 >= sites).expect("finite");
    let mut axial: Vec<(i64, i64)> = Vec::new();
    let n = rings as i64;
    for q in -n..=n {
        for r in -n..=n {
            if (q + r).abs() <= n {
                axial.push((q, r));
            }
        }
    }
    let pos = |(q, r): (i64, i64)| (isd * (q as f64 + r as f64 / 2.0), isd * r as f64 * 3f64.sqrt() / 2.0);
    let ring = |(q, r): (i64, i64)| q.abs().max(r.abs()).max((q + r).abs());
    axial.sort_by(|&a, &b| {
        let (pa, pb) = (pos(a), pos(b));
        ring(a).cmp(&ring(b)).then(pa.1.atan2(pa.0).total_cmp(&pb.1.atan2(pb.0)))
    });
    let cell_sites = (0..cells)
        .map(|id| CellSite { id, site: id / 3, position: pos(axial[id / 3]), boresight_deg: 30.0 + 120.0 * (id % 3) as f64 })
        .collect();
    // Wraparound images: the cluster repeats along (n+1, n) in axial coordinates and its 60° rotations.
    let base = pos((n + 1, n));
    let mut shifts = vec![(0.0, 0.0)];
    for k in 0..6 {
        let a = k as f64 * PI / 3.0;
        shifts.push((base.0 * a.cos() - base.1 * a.sin(), base.0 * a.sin() + base.1 * a.cos()));
    }
    (cell_sites, shifts)
}

/// Drops users uniformly in each sector wedge until each one's strongest cell is the intended one.
pub fn build_deployment<R: Rng + ?Sized>(cfg: &SimConfig, omega: Omega, rng: &mut R) -> Deployment {
    let d = &cfg.deployment;
    let ch = &cfg.channel;
    let (cells, shifts) = layout(d.cells, d.isd_m);
    let shifts: &[(f64, f64)] = if d.wraparound && hex_rings(d.cells.div_ceil(3)).is_some() { &shifts } else { &shifts[..1] };
    let n_sites = d.cells.div_ceil(3);
    let radius = d.isd_m / 3f64.sqrt();
    let budget = ch.cell_edge_snr_db + macro_pathloss_db(d.isd_m / 2.0);
    let shadow = Normal::new(0.0, ch.shadowing_std_db).expect("validated");

    let links_at = |p: (f64, f64), shadowing: &[f64]| -> Vec<LinkGeometry> {
        cells
            .iter()
            .map(|c| {
                let (dist, dx, dy) = shifts
                    .iter()
                    .map(|s| {
                        let (dx, dy) = (p.0 - c.position.0 - s.0, p.1 - c.position.1 - s.1);
                        ((dx * dx + dy * dy).sqrt(), dx, dy)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("at least one image");
                let dist = dist.max(ch.min_distance_m);
                let offset = wrap_deg(dy.atan2(dx).to_degrees() - c.boresight_deg);
                LinkGeometry {
                    distance_m: dist,
                    pathloss_db: macro_pathloss_db(dist),
                    shadowing_db: shadowing[c.site],
                    antenna_gain_db: sector_gain_db(offset, ch.sector_beamwidth_deg, ch.sector_max_attenuation_db),
                    link_budget_db: budget,
                    angle_deg: offset,
                }
            })
            .collect()
    };

    let mut users = Vec::new();
    for cell in &cells {
        for k in 0..omega.embb + omega.urllc {
            let class = if k < omega.embb { TrafficClass::Embb } else { TrafficClass::Urllc };
            let mut attempt = 0;
            let (position, links) = loop {
                attempt += 1;
                let phi = (cell.boresight_deg + rng.random_range(-60.0..60.0)).to_radians();
                let r0 = ch.min_distance_m;
                let r = (r0 * r0 + rng.random::<f64>() * (radius * radius - r0 * r0)).sqrt();
                let p = (cell.position.0 + r * phi.cos(), cell.position.1 + r * phi.sin());
                let shadowing: Vec<f64> = (0..n_sites).map(|_| shadow.sample(rng)).collect();
                let links = links_at(p, &shadowing);
                let strongest = (0..cells.len()).max_by(|&a, &b| links[a].gain_db().total_cmp(&links[b].gain_db()).then(b.cmp(&a)));
                if strongest == Some(cell.id) || attempt >= 1000 {
                    break (p, links);
                }
            };
            users.push(UserPlacement { id: users.len(), cell: cell.id, class, position, links });
        }
    }
    Deployment { cells, users, wraparound: shifts.len() > 1 }
}

/// Static fast-fading channels of a drop, one per (user, cell, subband).
#[derive(Debug, Clone)]
pub struct ChannelTable {
    n_cells: usize,
    n_subbands: usize,
    mats: Vec<CMatrix>,
}

impl ChannelTable {
    pub fn generate<R: Rng + ?Sized>(deployment: &Deployment, cfg: &SimConfig, rng: &mut R) -> Self {
        let n_cells = deployment.cells.len();
        let n_subbands = cfg.carrier.n_subbands();
        let mut mats = Vec::with_capacity(deployment.users.len() * n_cells * n_subbands);
        for u in &deployment.users {
            for link in &u.links {
                let model = CorrelatedRayleigh::new(link, &cfg.antennas);
                for _ in 0..n_subbands {
                    mats.push(model.draw(rng));
                }
            }
        }
        Self { n_cells, n_subbands, mats }
    }

    pub fn get(&self, user: usize, cell: usize, subband: usize) -> &CMatrix {
        &self.mats[(user * self.n_cells + cell) * self.n_subbands + subband]
    }
}

/// Allocation-free LMMSE-IRC SINR evaluation; numerically the same as
/// [`crate::phy::compute_sinr`] with the [`crate::phy::lmmse_irc_combiner`] combiner.
#[derive(Debug, Default)]
pub struct SinrKernel {
    eff: Vec<Complex64>,
    a: Vec<Complex64>,
    u: Vec<Complex64>,
}

impl SinrKernel {
    fn project(out: &mut Vec<Complex64>, h: &CMatrix, v: &CVector) {
        let mr = h.nrows();
        let base = out.len();
        out.resize(base + mr, Complex64::new(0.0, 0.0));
        let data = h.as_slice();
        for (c, &vc) in v.iter().enumerate() {
            let col = &data[c * mr..(c + 1) * mr];
            for r in 0..mr {
                out[base + r] += col[r] * vc;
            }
        }
    }

    /// Post-combining SINR for a unit-power desired beam `v` through `h`, with
    /// `intra` beams through `h` and `inter` beams through their own channels.
    /// Beams carry their power in their norm.
    pub fn sinr<'a>(
        &mut self,
        h: &CMatrix,
        v: &CVector,
        intra: impl IntoIterator<Item = &'a CVector>,
        inter: impl IntoIterator<Item = (&'a CMatrix, &'a CVector)>,
    ) -> f64 {
        let mr = h.nrows();
        self.eff.clear();
        Self::project(&mut self.eff, h, v);
        for g in intra {
            Self::project(&mut self.eff, h, g);
        }
        for (hj, g) in inter {
            Self::project(&mut self.eff, hj, g);
        }
        let k = self.eff.len() / mr;
        let e = &self.eff;

        // A = 2·h0h0ᴴ + Σ hᵢhᵢᴴ + (1 + ε)·I, column-major.
        self.a.clear();
        self.a.resize(mr * mr, Complex64::new(0.0, 0.0));
        for j in 0..k {
            let w = if j == 0 { 2.0 } else { 1.0 };
            let hv = &e[j * mr..(j + 1) * mr];
            for c in 0..mr {
                let hc = hv[c].conj() * w;
                for r in 0..mr {
                    self.a[c * mr + r] += hv[r] * hc;
                }
            }
        }
        for i in 0..mr {
            self.a[i * mr + i] += Complex64::new(1.0 + crate::linalg::REGULARIZATION, 0.0);
        }
        self.u.clear();
        self.u.extend_from_slice(&e[..mr]);
        if !solve_in_place(&mut self.a, &mut self.u, mr) {
            return 0.0;
        }
        let u = &self.u;
        let dot = |x: &[Complex64]| -> Complex64 { u.iter().zip(x).map(|(a, b)| a.conj() * b).sum() };
        let signal = dot(&e[..mr]).norm_sqr();
        if signal == 0.0 {
            return 0.0;
        }
        let noise: f64 = u.iter().map(|x| x.norm_sqr()).sum();
        let interference: f64 = (1..k).map(|j| dot(&e[j * mr..(j + 1) * mr]).norm_sqr()).sum();
        signal / (noise + interference)
    }
}

/// Gaussian elimination with partial pivoting on a column-major `n × n` system.
fn solve_in_place(a: &mut [Complex64], b: &mut [Complex64], n: usize) -> bool {
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[col * n + x].norm().total_cmp(&a[col * n + y].norm())).expect("non-empty");
        if a[col * n + pivot].norm() == 0.0 {
            return false;
        }
        if pivot != col {
            for c in 0..n {
                a.swap(c * n + col, c * n + pivot);
            }
            b.swap(col, pivot);
        }
        let inv = a[col * n + col].inv();
        for r in col + 1..n {
            let f = a[col * n + r] * inv;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in col..n {
                let v = a[c * n + col];
                a[c * n + r] -= f * v;
            }
            let bc = b[col];
            b[r] -= f * bc;
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[c * n + r] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
    b.iter().all(|x| x.re.is_finite() && x.im.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub packet_id: u64,
    pub arrival_tick: u64,
    /// Infinite for packets dropped at the deadline.
    pub latency_ms: f64,
    pub harq_tx_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TputSample {
    pub tick: u64,
    pub cell: usize,
    pub mbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairingStats {
    /// URLLC transmissions that were offered to MU pairing.
    pub attempts: u64,
    pub successes: u64,
    /// Number of (URLLC, eMBB partner) pairings with rate samples.
    pub pairings: u64,
    /// Sum over pairings of the mean MU sum rate on the shared PRBs, bits/s/Hz.
    pub mu_rate_sum: f64,
    /// Same for the rate the eMBB partner would have had alone on those PRBs.
    pub su_rate_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlerStats {
    pub transmissions: u64,
    pub failures: u64,
}

impl BlerStats {
    pub fn ratio(&self) -> f64 {
        if self.transmissions == 0 {
            0.0
        } else {
            self.failures as f64 / self.transmissions as f64
        }
    }
}

/// Packet conservation over the measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Conservation {
    pub arrived: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsStore {
    pub latency: Vec<LatencySample>,
    pub cell_tput: Vec<TputSample>,
    /// `(user id, Mbps)` of every eMBB user.
    pub embb_user_tput: Vec<(usize, f64)>,
    pub pairing: PairingStats,
    pub pairing_events: Vec<PairingEventRecord>,
    pub preemptions: u64,
    pub bler_urllc: BlerStats,
    pub bler_embb: BlerStats,
    pub packets: Conservation,
    pub arrival_checksum: u64,
    #[serde(skip)]
    pub arrivals: ArrivalTrace,
}

/// One row of the pairing/preemption event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingEventRecord {
    pub tick: u64,
    pub cell: usize,
    pub urllc_user: usize,
    pub outcome: String,
    pub partner: Option<usize>,
    pub chordal: Option<f64>,
    pub angle_deg: Option<f64>,
    /// Space-separated PRB indices.
    pub prbs: String,
}

impl From<&PairingDecision> for PairingEventRecord {
    fn from(d: &PairingDecision) -> Self {
        Self {
            tick: d.tick,
            cell: d.cell,
            urllc_user: d.urllc_user,
            outcome: d.outcome.name().to_string(),
            partner: d.embb_partner,
            chordal: d.chordal,
            angle_deg: d.angle_deg,
            prbs: d.prbs.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "),
        }
    }
}

/// What to simulate in one drop.
#[derive(Debug, Clone, Copy)]
pub struct DropSpec<'a> {
    pub policy: Policy,
    pub omega: Omega,
    pub drop: usize,
    pub seed: u64,
    /// Replayed arrivals; records whose packet id carries another drop index are ignored.
    pub trace: Option<&'a ArrivalTrace>,
    pub log_events: bool,
}

/// Packet ids of drop `d` start at `d << 32`.
pub fn packet_id_base(drop: usize) -> u64 {
    (drop as u64) << 32
}

#[derive(Debug)]
struct QueuedPacket {
    packet: Packet,
    unsent: u64,
    unacked: u64,
    tx_count: u32,
    measured: bool,
}

#[derive(Debug)]
struct TbRecord {
    user: usize,
    class: TrafficClass,
    mcs: usize,
    bits: u64,
    n_prb: usize,
    harq: HarqProcess,
    packet: Option<u64>,
}

/// A transport block on air this tick or slot, accumulating its SINR samples.
#[derive(Debug, Clone, Copy)]
struct OnAir {
    tb: u64,
    start: u64,
    sinr_sum: f64,
    samples: u32,
    punctured: u32,
    total: u32,
}

impl OnAir {
    fn new(tb: u64, start: u64) -> Self {
        Self { tb, start, sinr_sum: 0.0, samples: 0, punctured: 0, total: 0 }
    }
}

struct UserRt {
    cell: usize,
    idx: usize,
    class: TrafficClass,
    queue: VecDeque<QueuedPacket>,
    /// Failed TBs waiting for a retransmission, oldest first.
    retx: Vec<u64>,
    meas_sum: Vec<f64>,
    meas_n: u32,
    slot_bits: u64,
    measured_bits: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    spec: DropSpec<'a>,
    sched: SchedulerConfig,
    mcs: McsTable,
    bler: BlerModel,
    timing: CqiTiming,
    channels: ChannelTable,
    cells: Vec<CellState>,
    users: Vec<UserRt>,
    tbs: HashMap<u64, TbRecord>,
    next_tb: u64,
    next_packet: u64,
    slot_air: Vec<Vec<OnAir>>,
    kernel: SinrKernel,
    traffic_rng: ChaCha8Rng,
    decode_rng: ChaCha8Rng,
    trace_cursor: usize,
    trace_records: Vec<TraceRecord>,
    metrics: MetricsStore,
    measure_from: u64,
    measure_to: u64,
    cell_slot_bits: Vec<u64>,
}

/// Simulates one drop.
pub fn run_drop(cfg: &SimConfig, spec: &DropSpec<'_>) -> Result<MetricsStore> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, *spec)?;
    sim.run()?;
    Ok(sim.metrics)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, spec: DropSpec<'a>) -> Result<Self> {
        let sched = cfg.scheduler_config(spec.policy)?;
        let mcs = sched.mcs.clone();
        let mut geo_rng = stream_rng(spec.seed, spec.drop, Stream::Geometry);
        let deployment = build_deployment(cfg, spec.omega, &mut geo_rng);
        let mut ch_rng = stream_rng(spec.seed, spec.drop, Stream::Channel);
        let channels = ChannelTable::generate(&deployment, cfg, &mut ch_rng);
        let carrier = cfg.carrier;
        let n_sb = carrier.n_subbands();

        let codebooks = if cfg.antennas.needs_svd_feedback() {
            None
        } else {
            Some(dual_codebook(cfg.antennas.n_tx, cfg.feedback.b1, cfg.feedback.b2)?)
        };
        let warm_rate = mcs.lowest().spectral_efficiency;
        let mut cells: Vec<CellState> = Vec::new();
        let mut users = Vec::new();
        for cell in &deployment.cells {
            let mut sched_users = Vec::new();
            for u in deployment.users_of(cell.id) {
                let mut precoders = Vec::with_capacity(n_sb);
                for sb in 0..n_sb {
                    let h = ChannelMatrix::new(channels.get(u.id, cell.id, sb).clone(), u.id, cell.id, sb);
                    let p = match &codebooks {
                        Some((cb1, cb2)) => quantize_dual_codebook(&h, cb1, cb2)?.precoder,
                        None => svd_feedback(&h)?,
                    };
                    precoders.push(p);
                }
                let prior = linear_to_db(deployment.geometry_sinr(u.id).max(1e-6));
                let cqi = CqiState::new(n_sb, cfg.cqi.xi, cfg.cqi.mu_offset_db, prior)?;
                users.push(UserRt {
                    cell: cell.id,
                    idx: sched_users.len(),
                    class: u.class,
                    queue: VecDeque::new(),
                    retx: Vec::new(),
                    meas_sum: vec![0.0; n_sb],
                    meas_n: 0,
                    slot_bits: 0,
                    measured_bits: 0,
                });
                sched_users.push(SchedUser { id: u.id, class: u.class, cqi, avg_rate: warm_rate, precoders });
            }
            cells.push(CellState::new(cell.id, sched_users, carrier.prbs));
        }

        let slot_ticks = carrier.minislots_per_slot as u64;
        let warm_slots = (cfg.engine.warmup_ms / carrier.slot_ms()).round() as u64;
        let meas_slots = ((cfg.engine.duration_ms / carrier.slot_ms()).round() as u64).max(1);
        let trace_records = spec
            .trace
            .map(|t| {
                let base = packet_id_base(spec.drop);
                t.records.iter().copied().filter(|r| r.packet_id >> 32 == base >> 32).collect()
            })
            .unwrap_or_default();
        let n_cells = cells.len();
        Ok(Self {
            cfg,
            spec,
            sched,
            mcs,
            bler: cfg.bler_model(),
            timing: cfg.cqi_timing(),
            channels,
            slot_air: vec![Vec::new(); n_cells],
            cells,
            users,
            tbs: HashMap::new(),
            next_tb: 0,
            next_packet: packet_id_base(spec.drop),
            kernel: SinrKernel::default(),
            traffic_rng: stream_rng(spec.seed, spec.drop, Stream::Traffic),
            decode_rng: stream_rng(spec.seed, spec.drop, Stream::Decode),
            trace_cursor: 0,
            trace_records,
            metrics: MetricsStore::default(),
            measure_from: warm_slots * slot_ticks,
            measure_to: (warm_slots + meas_slots) * slot_ticks,
            cell_slot_bits: vec![0; n_cells],
        })
    }

    fn measuring(&self, tick: u64) -> bool {
        (self.measure_from..self.measure_to).contains(&tick)
    }

    fn run(&mut self) -> Result<()> {
        let deadline_ticks = self.cfg.carrier.ms_to_ticks(self.cfg.traffic.urllc.drop_deadline_ms);
        let slot_ticks = self.cfg.carrier.minislots_per_slot as u64;
        // Drain long enough for every measured packet to be delivered or dropped.
        let end = (self.measure_to + deadline_ticks + 1).div_ceil(slot_ticks) * slot_ticks;
        for tick in 0..end {
            self.step(tick, deadline_ticks)?;
        }
        for u in &self.users {
            for q in &u.queue {
                if q.measured {
                    self.metrics.packets.in_flight += 1;
                }
            }
        }
        let meas_s = (self.measure_to - self.measure_from) as f64 * self.cfg.carrier.minislot_ms / 1000.0;
        for (id, u) in self.users.iter().enumerate() {
            if u.class == TrafficClass::Embb {
                self.metrics.embb_user_tput.push((id, u.measured_bits as f64 / meas_s / 1e6));
            }
        }
        self.metrics.arrivals.records.sort_by_key(|r| (r.arrival_tick, r.packet_id));
        self.metrics.arrival_checksum = self.metrics.arrivals.checksum();
        Ok(())
    }

    fn step(&mut self, tick: u64, deadline_ticks: u64) -> Result<()> {
        let carrier = self.cfg.carrier;
        self.arrivals(tick);
        self.expire(tick, deadline_ticks);
        self.cqi_pipeline(tick);

        let boundary = carrier.is_slot_boundary(tick);
        let pf = self.spec.policy == Policy::Pf;
        for c in 0..self.cells.len() {
            self.cells[c].urllc_demand.clear();
            if boundary {
                let retx: Vec<Option<Retx>> = self.cells[c]
                    .users
                    .iter()
                    .map(|su| if su.class == TrafficClass::Embb { self.due_retx(su.id, tick) } else { None })
                    .collect();
                self.cells[c].embb_retx = retx;
            }
            if !pf || boundary {
                let demands: Vec<UrllcDemand> = self.cells[c]
                    .users
                    .iter()
                    .enumerate()
                    .filter(|(_, su)| su.class == TrafficClass::Urllc)
                    .filter_map(|(i, su)| self.urllc_demand(su.id, tick).map(|demand| UrllcDemand { user: i, demand }))
                    .collect();
                self.cells[c].urllc_demand = demands;
            }
        }

        // Phase 1: every cell fixes its grid.
        let mut grids: Vec<ScheduleGrid> = Vec::with_capacity(self.cells.len());
        let mut mini_air: Vec<Vec<(usize, OnAir)>> = Vec::with_capacity(self.cells.len());
        let mut decisions: Vec<Vec<PairingDecision>> = Vec::with_capacity(self.cells.len());
        for c in 0..self.cells.len() {
            let out = schedule_tick(&self.cells[c], tick, &self.sched)?;
            if self.measuring(tick) {
                self.metrics.preemptions += out.preemptions as u64;
                self.metrics.pairing.attempts += out.pairing_attempts as u64;
                self.metrics.pairing.successes += out.pairing_successes as u64;
            }
            if let Some(plan) = out.plan {
                self.start_slot(c, tick, &plan)?;
                self.cells[c].plan = plan;
            }
            let mut air = Vec::new();
            for tx in &out.urllc {
                let gid = self.cells[c].users[tx.user].id;
                let tb = self.start_urllc_tb(gid, tx.retx, tx.mcs, tx.bits, tx.prbs.len(), tick, false)?;
                air.push((tx.user, OnAir::new(tb, tick)));
            }
            mini_air.push(air);
            decisions.push(out.decisions);
            grids.push(out.grid);
        }

        // Phase 2: SINR of every radiating entry against all grids of this tick.
        let mut sinr_of: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); carrier.prbs]; self.cells.len()];
        for c in 0..self.cells.len() {
            for p in 0..carrier.prbs {
                for e in &grids[c].prbs[p] {
                    let target = match mini_air[c].iter().position(|(u, _)| *u == e.user) {
                        Some(i) => &mut mini_air[c][i].1,
                        None => {
                            let owner = self.cells[c].plan.owner[p].expect("slot entries have an owner");
                            &mut self.slot_air[c][owner]
                        }
                    };
                    target.total += 1;
                    if e.kind == EntryKind::Victim {
                        target.punctured += 1;
                        continue;
                    }
                    let sb = carrier.subband_of(p);
                    let h = self.channels.get(e.user_id, c, sb);
                    let intra = grids[c].prbs[p].iter().filter(|o| o.radiates() && o.user != e.user).map(|o| &o.precoder.vector);
                    let channels = &self.channels;
                    let inter = grids.iter().enumerate().filter(|&(j, _)| j != c).flat_map(|(j, g)| {
                        g.prbs[p].iter().filter(|o| o.radiates()).map(move |o| (channels.get(e.user_id, j, sb), &o.precoder.vector))
                    });
                    let s = self.kernel.sinr(h, &e.precoder.vector, intra, inter);
                    target.sinr_sum += s;
                    target.samples += 1;
                    sinr_of[c][p].push((e.user, s));
                }
            }
        }

        if self.measuring(tick) {
            self.pairing_rates(&grids, &decisions, &sinr_of);
            if self.spec.log_events {
                for d in decisions.iter().flatten() {
                    self.metrics.pairing_events.push(d.into());
                }
            }
        }
        if carrier.minislot_index(tick) == carrier.minislots_per_slot / 2 {
            self.measure_cqi(&grids);
        }

        // Decoding: mini-slot blocks now, slot blocks at the end of the slot.
        for (c, air) in mini_air.into_iter().enumerate() {
            for (_, a) in air {
                self.decode(c, a, tick)?;
            }
        }
        if carrier.is_slot_end(tick) {
            for c in 0..self.cells.len() {
                for a in std::mem::take(&mut self.slot_air[c]) {
                    self.decode(c, a, tick)?;
                }
            }
            self.end_slot(tick);
        }
        Ok(())
    }

    fn arrivals(&mut self, tick: u64) {
        let tick_s = self.cfg.carrier.minislot_ms / 1000.0;
        let measured = self.measuring(tick);
        let mut fresh: Vec<Packet> = Vec::new();
        if self.spec.trace.is_some() {
            while let Some(r) = self.trace_records.get(self.trace_cursor) {
                if r.arrival_tick > tick {
                    break;
                }
                if r.arrival_tick == tick && r.user_id < self.users.len() && self.users[r.user_id].class == TrafficClass::Urllc {
                    fresh.push(Packet::new(r.packet_id, r.user_id, r.size_bytes, tick));
                }
                self.trace_cursor += 1;
            }
        } else {
            let profile = TrafficProfile::urllc(self.cfg.traffic.urllc.lambda, self.cfg.traffic.urllc.payload_bytes);
            for id in 0..self.users.len() {
                if self.users[id].class == TrafficClass::Urllc {
                    fresh.extend(generate_arrivals(&profile, id, tick_s, tick, &mut self.next_packet, &mut self.traffic_rng));
                }
            }
        }
        for mut p in fresh {
            p.deadline_ms = self.cfg.traffic.urllc.drop_deadline_ms;
            self.metrics.arrivals.records.push(TraceRecord {
                packet_id: p.id,
                user_id: p.user_id,
                arrival_tick: p.arrival_tick,
                size_bytes: p.size_bytes,
            });
            if measured {
                self.metrics.packets.arrived += 1;
            }
            let bits = p.bits();
            let user = p.user_id;
            self.users[user].queue.push_back(QueuedPacket { packet: p, unsent: bits, unacked: bits, tx_count: 0, measured });
        }
    }

    fn expire(&mut self, tick: u64, deadline_ticks: u64) {
        for u in 0..self.users.len() {
            while let Some(q) = self.users[u].queue.front() {
                if tick < q.packet.arrival_tick + deadline_ticks {
                    break;
                }
                let q = self.users[u].queue.pop_front().expect("front checked");
                if q.measured {
                    self.metrics.packets.dropped += 1;
                    self.metrics.latency.push(LatencySample {
                        packet_id: q.packet.id,
                        arrival_tick: q.packet.arrival_tick,
                        latency_ms: f64::INFINITY,
                        harq_tx_count: q.tx_count,
                    });
                }
                let id = q.packet.id;
                let tbs = &mut self.tbs;
                self.users[u].retx.retain(|tb| {
                    let keep = tbs.get(tb).is_some_and(|r| r.packet != Some(id));
                    if !keep {
                        tbs.remove(tb);
                    }
                    keep
                });
            }
        }
    }

    fn cqi_pipeline(&mut self, tick: u64) {
        let report_tick = self.timing.is_report_tick(tick);
        for c in 0..self.cells.len() {
            for i in 0..self.cells[c].users.len() {
                let gid = self.cells[c].users[i].id;
                if report_tick {
                    let u = &mut self.users[gid];
                    let report: Vec<f64> = if u.meas_n == 0 {
                        { let q = &self.cells[c].users[i].cqi; (0..q.n_subbands()).map(|sb| q.su_db(sb)).collect() }
                    } else {
                        u.meas_sum.iter().map(|s| linear_to_db((s / u.meas_n as f64).max(1e-12))).collect()
                    };
                    u.meas_sum.iter_mut().for_each(|s| *s = 0.0);
                    u.meas_n = 0;
                    self.cells[c].users[i].cqi.report(tick, &report, &self.timing);
                } else {
                    self.cells[c].users[i].cqi.advance(tick);
                }
            }
        }
    }

    /// SU SINR each user would see on the centre PRB of every subband, under this tick's interference.
    fn measure_cqi(&mut self, grids: &[ScheduleGrid]) {
        let carrier = self.cfg.carrier;
        for gid in 0..self.users.len() {
            let (c, idx) = (self.users[gid].cell, self.users[gid].idx);
            for sb in 0..carrier.n_subbands() {
                let range = carrier.subband_prb_range(sb);
                let p = (range.start + range.end) / 2;
                let v = &self.cells[c].users[idx].precoders[sb].vector;
                let h = self.channels.get(gid, c, sb);
                let channels = &self.channels;
                let inter = grids.iter().enumerate().filter(|&(j, _)| j != c).flat_map(|(j, g)| {
                    g.prbs[p].iter().filter(|o| o.radiates()).map(move |o| (channels.get(gid, j, sb), &o.precoder.vector))
                });
                let s = self.kernel.sinr(h, v, std::iter::empty(), inter);
                self.users[gid].meas_sum[sb] += s;
            }
            self.users[gid].meas_n += 1;
        }
    }

    fn due_retx(&self, gid: usize, tick: u64) -> Option<Retx> {
        self.users[gid].retx.iter().find_map(|tb| {
            let r = &self.tbs[tb];
            (r.harq.next_eligible_tick() <= tick).then_some(Retx { tb: *tb, mcs: r.mcs, bits: r.bits, n_prb: r.n_prb })
        })
    }

    fn urllc_demand(&self, gid: usize, tick: u64) -> Option<Demand> {
        if let Some(r) = self.due_retx(gid, tick) {
            return Some(Demand::Retx(r));
        }
        self.users[gid].queue.iter().find(|q| q.unsent > 0).map(|q| Demand::New { bits: q.unsent })
    }

    /// Registers a URLLC transmission; new data is charged to the head-of-line packet.
    #[allow(clippy::too_many_arguments)]
    fn start_urllc_tb(&mut self, gid: usize, retx: Option<u64>, mcs: usize, bits: u64, n_prb: usize, tick: u64, slot_tti: bool) -> Result<u64> {
        let tb = match retx {
            Some(tb) => {
                self.users[gid].retx.retain(|&t| t != tb);
                tb
            }
            None => {
                let cell = self.users[gid].cell;
                let q = self.users[gid].queue.iter_mut().find(|q| q.unsent > 0).ok_or_else(|| SimError::InvariantViolation {
                    cell,
                    tick,
                    what: format!("URLLC user {gid} scheduled without queued data"),
                })?;
                q.unsent -= bits.min(q.unsent);
                let tti = if slot_tti { self.cfg.carrier.minislots_per_slot as u64 } else { 1 };
                let id = self.next_tb;
                self.next_tb += 1;
                self.tbs.insert(
                    id,
                    TbRecord {
                        user: gid,
                        class: TrafficClass::Urllc,
                        mcs,
                        bits,
                        n_prb,
                        harq: HarqProcess::new(id, self.cfg.harq.rtt_ttis * tti, u32::MAX),
                        packet: Some(q.packet.id),
                    },
                );
                id
            }
        };
        let packet = self.tbs[&tb].packet;
        if let Some(q) = self.users[gid].queue.iter_mut().find(|q| Some(q.packet.id) == packet) {
            q.tx_count += 1;
        }
        Ok(tb)
    }

    fn start_slot(&mut self, c: usize, tick: u64, plan: &SlotPlan) -> Result<()> {
        let mut air = Vec::with_capacity(plan.tbs.len());
        for tb in &plan.tbs {
            let gid = self.cells[c].users[tb.user].id;
            let id = match tb.class {
                TrafficClass::Urllc => self.start_urllc_tb(gid, tb.retx, tb.mcs, tb.bits, tb.prbs.len(), tick, true)?,
                TrafficClass::Embb => match tb.retx {
                    Some(id) => {
                        self.users[gid].retx.retain(|&t| t != id);
                        id
                    }
                    None => {
                        let id = self.next_tb;
                        self.next_tb += 1;
                        let rtt = self.cfg.harq.rtt_ttis * self.cfg.carrier.minislots_per_slot as u64;
                        self.tbs.insert(
                            id,
                            TbRecord {
                                user: gid,
                                class: TrafficClass::Embb,
                                mcs: tb.mcs,
                                bits: tb.bits,
                                n_prb: tb.prbs.len(),
                                harq: HarqProcess::new(id, rtt, self.cfg.harq.embb_max_tx),
                                packet: None,
                            },
                        );
                        id
                    }
                },
            };
            air.push(OnAir::new(id, tick));
        }
        self.slot_air[c] = air;
        Ok(())
    }

    fn decode(&mut self, c: usize, air: OnAir, tick: u64) -> Result<()> {
        let Some(rec) = self.tbs.get_mut(&air.tb) else {
            // The packet behind this block expired while it was on air.
            return Ok(());
        };
        let sinr = if air.samples > 0 { air.sinr_sum / air.samples as f64 } else { 0.0 };
        let rho = if air.total > 0 { air.punctured as f64 / air.total as f64 } else { 0.0 };
        rec.harq.record(Transmission { tick: air.start, sinr, punctured_fraction: rho })?;
        let outcome = decode_tb(&rec.harq, self.mcs.get(rec.mcs), &self.bler, &mut self.decode_rng);
        let (gid, class, bits, packet) = (rec.user, rec.class, rec.bits, rec.packet);
        let exhausted = rec.harq.exhausted();
        let measuring = self.measuring(tick);
        if measuring {
            let stats = match class {
                TrafficClass::Urllc => &mut self.metrics.bler_urllc,
                TrafficClass::Embb => &mut self.metrics.bler_embb,
            };
            stats.transmissions += 1;
            if outcome.result == DecodeResult::Failure {
                stats.failures += 1;
            }
        }
        match outcome.result {
            DecodeResult::Success => {
                self.tbs.remove(&air.tb);
                self.users[gid].slot_bits += bits;
                self.cell_slot_bits[c] += bits;
                if measuring {
                    self.users[gid].measured_bits += bits;
                }
                if let Some(pid) = packet {
                    self.ack_packet(gid, pid, bits, tick)?;
                }
            }
            DecodeResult::Failure => {
                if exhausted {
                    self.tbs.remove(&air.tb);
                } else {
                    self.users[gid].retx.push(air.tb);
                }
            }
        }
        Ok(())
    }

    fn ack_packet(&mut self, gid: usize, pid: u64, bits: u64, tick: u64) -> Result<()> {
        let queue = &mut self.users[gid].queue;
        let Some(pos) = queue.iter().position(|q| q.packet.id == pid) else {
            return Ok(());
        };
        let q = &mut queue[pos];
        q.unacked = q.unacked.saturating_sub(bits);
        if q.unacked > 0 {
            return Ok(());
        }
        let mut q = queue.remove(pos).expect("position is valid");
        let latency = record_delivery(&mut q.packet, tick, self.cfg.carrier.minislot_ms, self.cfg.traffic.processing_offset_ms)?;
        if q.measured {
            self.metrics.packets.delivered += 1;
            self.metrics.latency.push(LatencySample {
                packet_id: pid,
                arrival_tick: q.packet.arrival_tick,
                latency_ms: latency,
                harq_tx_count: q.tx_count,
            });
        }
        Ok(())
    }

    fn end_slot(&mut self, tick: u64) {
        let carrier = self.cfg.carrier;
        let slot_start = tick + 1 - carrier.minislots_per_slot as u64;
        let re = carrier.re_per_slot() as f64;
        for c in 0..self.cells.len() {
            for su in &mut self.cells[c].users {
                let u = &mut self.users[su.id];
                su.avg_rate = update_avg_rate(su.avg_rate, u.slot_bits as f64 / re, self.cfg.scheduler.pf_horizon_ttis);
                u.slot_bits = 0;
            }
            if self.measuring(slot_start) {
                self.metrics.cell_tput.push(TputSample {
                    tick: slot_start,
                    cell: c,
                    mbps: self.cell_slot_bits[c] as f64 / (carrier.slot_ms() * 1000.0),
                });
            }
            self.cell_slot_bits[c] = 0;
        }
    }

    /// MU sum rate on shared PRBs versus the partner's SU rate there.
    fn pairing_rates(&mut self, grids: &[ScheduleGrid], decisions: &[Vec<PairingDecision>], sinr_of: &[Vec<Vec<(usize, f64)>>]) {
        let carrier = self.cfg.carrier;
        for (c, ds) in decisions.iter().enumerate() {
            for d in ds.iter().filter(|d| d.outcome == PairingOutcome::Paired) {
                let Some(partner) = d.embb_partner else { continue };
                let (urllc_idx, partner_idx) = (self.users[d.urllc_user].idx, self.users[partner].idx);
                let (mut mu, mut su, mut n) = (0.0, 0.0, 0usize);
                for &p in &d.prbs {
                    let find = |u: usize| sinr_of[c][p].iter().find(|(x, _)| *x == u).map(|&(_, s)| s);
                    let (Some(s_u), Some(s_e)) = (find(urllc_idx), find(partner_idx)) else { continue };
                    let sb = carrier.subband_of(p);
                    let h = self.channels.get(partner, c, sb);
                    let v = &self.cells[c].users[partner_idx].precoders[sb].vector;
                    let channels = &self.channels;
                    let inter = grids.iter().enumerate().filter(|&(j, _)| j != c).flat_map(|(j, g)| {
                        g.prbs[p].iter().filter(|o| o.radiates()).map(move |o| (channels.get(partner, j, sb), &o.precoder.vector))
                    });
                    let s_alone = self.kernel.sinr(h, v, std::iter::empty(), inter);
                    mu += prb_rate(s_u, 2) + prb_rate(s_e, 2);
                    su += prb_rate(s_alone, 1);
                    n += 1;
                }
                if n > 0 {
                    self.metrics.pairing.pairings += 1;
                    self.metrics.pairing.mu_rate_sum += mu / n as f64;
                    self.metrics.pairing.su_rate_sum += su / n as f64;
                }
            }
        }
    }
}

/// Empirical CCDF inverse: the smallest sample `x` with `P(latency > x) ≤ level`.
///
/// Requires `level ≥ 10/n` so that at least ten samples lie in the tail.
pub fn latency_quantile(samples: &[f64], level: f64) -> Result<f64> {
    let n = samples.len();
    if n == 0 || !(level > 0.0) || level * (n as f64) < 10.0 - 1e-9 {
        return Err(SimError::InsufficientSamples { needed: (10.0 / level.max(f64::MIN_POSITIVE)).ceil() as usize, got: n });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let allowed = ((level * n as f64) + 1e-9).floor() as usize;
    Ok(sorted[n - 1 - allowed.min(n - 1)])
}

/// Fraction of samples strictly above `x`.
pub fn ccdf_at(samples: &[f64], x: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s > x).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub level: f64,
    pub latency_ms: Option<f64>,
}

/// Pooled statistics over the drops of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub drops: usize,
    pub latency_samples: usize,
    pub latency_quantiles: Vec<QuantilePoint>,
    pub latency_ccdf_at_1ms: f64,
    pub latency_ccdf_at_5ms: f64,
    pub mean_cell_tput_mbps: f64,
    pub cell_tput_p5_mbps: f64,
    pub cell_tput_p50_mbps: f64,
    pub cell_tput_p95_mbps: f64,
    pub mean_embb_user_tput_mbps: f64,
    pub pairing_attempts: u64,
    pub pairing_successes: u64,
    pub mu_success_ratio: f64,
    pub mean_mu_rate: f64,
    pub mean_su_hypothetical_rate: f64,
    /// `mean_mu_rate / mean_su_hypothetical_rate`.
    pub mu_gain: f64,
    pub preemptions: u64,
    pub bler_urllc: f64,
    pub bler_embb: f64,
    pub packets: Conservation,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i]
}

pub const SUMMARY_LEVELS: [f64; 3] = [1e-1, 1e-2, 1e-3];

pub fn aggregate_runs(stores: &[MetricsStore]) -> Summary {
    let latencies: Vec<f64> = stores.iter().flat_map(|s| s.latency.iter().map(|l| l.latency_ms)).collect();
    let mut tput: Vec<f64> = stores.iter().flat_map(|s| s.cell_tput.iter().map(|t| t.mbps)).collect();
    tput.sort_by(f64::total_cmp);
    let users: Vec<f64> = stores.iter().flat_map(|s| s.embb_user_tput.iter().map(|&(_, m)| m)).collect();
    let mut pairing = PairingStats::default();
    let mut packets = Conservation::default();
    let (mut bu, mut be) = (BlerStats::default(), BlerStats::default());
    let mut preemptions = 0;
    for s in stores {
        pairing.attempts += s.pairing.attempts;
        pairing.successes += s.pairing.successes;
        pairing.pairings += s.pairing.pairings;
        pairing.mu_rate_sum += s.pairing.mu_rate_sum;
        pairing.su_rate_sum += s.pairing.su_rate_sum;
        packets.arrived += s.packets.arrived;
        packets.delivered += s.packets.delivered;
        packets.dropped += s.packets.dropped;
        packets.in_flight += s.packets.in_flight;
        bu.transmissions += s.bler_urllc.transmissions;
        bu.failures += s.bler_urllc.failures;
        be.transmissions += s.bler_embb.transmissions;
        be.failures += s.bler_embb.failures;
        preemptions += s.preemptions;
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let per_pairing = |sum: f64| if pairing.pairings == 0 { 0.0 } else { sum / pairing.pairings as f64 };
    let (mu, su) = (per_pairing(pairing.mu_rate_sum), per_pairing(pairing.su_rate_sum));
    Summary {
        drops: stores.len(),
        latency_samples: latencies.len(),
        latency_quantiles: SUMMARY_LEVELS
            .iter()
            .map(|&level| QuantilePoint { level, latency_ms: latency_quantile(&latencies, level).ok().filter(|x| x.is_finite()) })
            .collect(),
        latency_ccdf_at_1ms: ccdf_at(&latencies, 1.0),
        latency_ccdf_at_5ms: ccdf_at(&latencies, 5.0),
        mean_cell_tput_mbps: mean(&tput),
        cell_tput_p5_mbps: percentile(&tput, 0.05),
        cell_tput_p50_mbps: percentile(&tput, 0.5),
        cell_tput_p95_mbps: percentile(&tput, 0.95),
        mean_embb_user_tput_mbps: mean(&users),
        pairing_attempts: pairing.attempts,
        pairing_successes: pairing.successes,
        mu_success_ratio: if pairing.attempts == 0 { 0.0 } else { pairing.successes as f64 / pairing.attempts as f64 },
        mean_mu_rate: mu,
        mean_su_hypothetical_rate: su,
        mu_gain: if su > 0.0 { mu / su } else { 0.0 },
        preemptions,
        bler_urllc: bu.ratio(),
        bler_embb: be.ratio(),
        packets,
    }
}

/// Geometry-only deployment statistics, handy for sanity checks.
pub fn geometry_sinr_db(deployment: &Deployment) -> Vec<f64> {
    (0..deployment.users.len()).map(|u| linear_to_db(deployment.geometry_sinr(u))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use crate::phy::{compute_sinr, lmmse_irc_combiner, TransmissionContext};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| complex_gaussian(rng))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| complex_gaussian(rng))
    }

    #[test]
    fn kernel_matches_reference_sinr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut kernel = SinrKernel::default();
        for mr in [1, 2, 4] {
            for _ in 0..50 {
                let h = random_matrix(&mut rng, mr, 8) * Complex64::new(3.0, 0.0);
                let v = random_vector(&mut rng, 8);
                let g = random_vector(&mut rng, 8);
                let hj = random_matrix(&mut rng, mr, 8);
                let vj = random_vector(&mut rng, 8);
                let intra = [(&g, 1.0)];
                let inter = [(&hj, &vj, 1.0)];
                let ctx = TransmissionContext { serving: (&h, &v, 1.0), intra_cell: &intra, inter_cell: &inter };
                let reference = compute_sinr(&ctx, &lmmse_irc_combiner(&ctx, 1.0).unwrap());
                let fast = kernel.sinr(&h, &v, [&g], [(&hj, &vj)]);
                assert!((fast - reference).abs() <= 1e-9 * reference.abs().max(1e-12), "{fast} vs {reference}");
            }
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(latency_quantile(&[0.143; 40], 0.5).unwrap(), 0.143);
        let s: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(latency_quantile(&s, 0.1).unwrap(), 900.0);
        assert!(matches!(latency_quantile(&s, 1e-3), Err(SimError::InsufficientSamples { .. })));
        assert!(latency_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn hexagon_layouts() {
        let (cells, shifts) = layout(21, 500.0);
        assert_eq!(cells.len(), 21);
        assert_eq!(cells[0].position, (0.0, 0.0));
        for s in &shifts[1..] {
            assert!(((s.0 * s.0 + s.1 * s.1).sqrt() - 500.0 * 7f64.sqrt()).abs() < 1e-9);
        }
        for c in &cells[3..] {
            let d = (c.position.0.powi(2) + c.position.1.powi(2)).sqrt();
            assert!((d - 500.0).abs() < 1e-9);
        }
        let (cells, _) = layout(3, 500.0);
        assert!(cells.iter().all(|c| c.site == 0));
    }

    #[test]
    fn users_attach_to_their_strongest_cell() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dep = build_deployment(&cfg, Omega::new(5, 5), &mut rng);
        assert_eq!(dep.users.len(), 30);
        for u in &dep.users {
            let best = (0..3).max_by(|&a, &b| u.links[a].gain_db().total_cmp(&u.links[b].gain_db())).unwrap();
            assert_eq!(best, u.cell);
        }
        assert_eq!(dep.users.iter().filter(|u| u.class == TrafficClass::Urllc).count(), 15);
    }

    #[test]
    fn sector_pattern() {
        assert_eq!(sector_gain_db(0.0, 65.0, 20.0), 0.0);
        assert!((sector_gain_db(32.5, 65.0, 20.0) + 3.0).abs() < 1e-12);
        assert_eq!(sector_gain_db(180.0, 65.0, 20.0), -20.0);
    }
}
