//! Simulation configuration.
//!
//! The file format is TOML. Keys may be written as nested tables or as dotted
//! keys (`traffic.urllc.lambda = 250`); every omitted key takes its default,
//! so an empty file is a complete configuration. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::carrier::Carrier;
use crate::channel::{dual_codebook, AntennaConfig};
use crate::error::{Result, SimError};
use crate::linkadapt::{BlerBackoff, BlerModel, CqiTiming, McsTable};
use crate::scheduler::{Policy, SchedulerConfig, SchedulerWeights};

/// Cell loading state: eMBB and URLLC users per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Omega {
    pub embb: usize,
    pub urllc: usize,
}

impl Omega {
    pub fn new(embb: usize, urllc: usize) -> Self {
        Self { embb, urllc }
    }
}

impl From<[usize; 2]> for Omega {
    fn from([embb, urllc]: [usize; 2]) -> Self {
        Self { embb, urllc }
    }
}

impl From<Omega> for [usize; 2] {
    fn from(o: Omega) -> Self {
        [o.embb, o.urllc]
    }
}

impl fmt::Display for Omega {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.embb, self.urllc)
    }
}

impl FromStr for Omega {
    type Err = SimError;

    /// Accepts `20x5` or `(20,5)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (a, b) = t
            .split_once(['x', ','])
            .ok_or_else(|| SimError::Config(format!("cell loading {s:?} is not of the form 20x5")))?;
        let parse = |v: &str| {
            v.trim().parse::<usize>().map_err(|_| SimError::Config(format!("cell loading {s:?} is not of the form 20x5")))
        };
        Ok(Self::new(parse(a)?, parse(b)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeploymentConfig {
    pub cells: usize,
    pub wraparound: bool,
    pub isd_m: f64,
    pub embb_users: usize,
    pub urllc_users: usize,
    /// Cell loadings to sweep; empty means just `(embb_users, urllc_users)`.
    pub omegas: Vec<Omega>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        Self { cells: 3, wraparound: true, isd_m: 500.0, embb_users: 5, urllc_users: 5, omegas: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub shadowing_std_db: f64,
    pub min_distance_m: f64,
    /// Per-antenna SNR of a boresight user at half the inter-site distance, before shadowing.
    pub cell_edge_snr_db: f64,
    /// Sector half-power beamwidth.
    pub sector_beamwidth_deg: f64,
    pub sector_max_attenuation_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            shadowing_std_db: 8.0,
            min_distance_m: 35.0,
            cell_edge_snr_db: 10.0,
            sector_beamwidth_deg: 65.0,
            sector_max_attenuation_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackConfig {
    pub b1: u32,
    pub b2: u32,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { b1: 4, b2: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqiConfig {
    pub periodicity_ms: f64,
    pub delay_ms: f64,
    pub xi: f64,
    /// MU CQI offset δ.
    pub mu_offset_db: f64,
}

impl Default for CqiConfig {
    fn default() -> Self {
        Self { periodicity_ms: 5.0, delay_ms: 2.0, xi: 0.01, mu_offset_db: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarqConfig {
    /// Round trip in TTIs of the transmitting traffic class.
    pub rtt_ttis: u64,
    pub embb_max_tx: u32,
}

impl Default for HarqConfig {
    fn default() -> Self {
        Self { rtt_ttis: 4, embb_max_tx: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub urllc_bler_target: f64,
    pub embb_bler_target: f64,
    pub backoff_db_at_1pct: f64,
    pub olla_offset_db: f64,
    pub bler_slope_db: f64,
    pub max_code_rate: f64,
    /// CSV MCS table; the built-in table when absent.
    pub mcs_table: Option<PathBuf>,
    pub deterministic_bler: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            urllc_bler_target: 0.01,
            embb_bler_target: 0.1,
            backoff_db_at_1pct: 2.0,
            olla_offset_db: 0.0,
            bler_slope_db: 0.5,
            max_code_rate: 0.93,
            mcs_table: None,
            deterministic_bler: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UrllcTrafficConfig {
    /// Packets per second per user.
    pub lambda: f64,
    pub payload_bytes: u32,
    /// Packets still undelivered this long after arrival are dropped.
    pub drop_deadline_ms: f64,
}

impl Default for UrllcTrafficConfig {
    fn default() -> Self {
        Self { lambda: 250.0, payload_bytes: 50, drop_deadline_ms: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub urllc: UrllcTrafficConfig,
    /// Constant added to every latency sample.
    pub processing_offset_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    pub mu_rank: usize,
    pub alpha_urllc: f64,
    pub alpha_embb: f64,
    pub d_min: f64,
    pub theta_deg: f64,
    pub pf_horizon_ttis: f64,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self { mu_rank: 2, alpha_urllc: 100.0, alpha_embb: 1.0, d_min: 0.1, theta_deg: 60.0, pf_horizon_ttis: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub warmup_ms: f64,
    pub duration_ms: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self { warmup_ms: 200.0, duration_ms: 4000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub drops: usize,
    pub policies: Vec<Policy>,
    pub deployment: DeploymentConfig,
    pub carrier: Carrier,
    pub antennas: AntennaConfig,
    pub channel: ChannelSection,
    pub feedback: FeedbackConfig,
    pub cqi: CqiConfig,
    pub harq: HarqConfig,
    pub link: LinkConfig,
    pub traffic: TrafficConfig,
    pub scheduler: SchedulerSection,
    pub engine: EngineSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            drops: 20,
            policies: Policy::ALL.to_vec(),
            deployment: DeploymentConfig::default(),
            carrier: Carrier::default(),
            antennas: AntennaConfig::default(),
            channel: ChannelSection::default(),
            feedback: FeedbackConfig::default(),
            cqi: CqiConfig::default(),
            harq: HarqConfig::default(),
            link: LinkConfig::default(),
            traffic: TrafficConfig::default(),
            scheduler: SchedulerSection::default(),
            engine: EngineSection::default(),
        }
    }
}

/// One (policy, loading) combination; each is simulated over all drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub policy: Policy,
    pub omega: Omega,
}

/// Number of hexagonal rings whose site count is `sites`, if it is a full hexagon.
pub fn hex_rings(sites: usize) -> Option<usize> {
    (0..8).find(|&n| 3 * n * n + 3 * n + 1 == sites)
}

fn invalid<T>(what: impl Into<String>) -> Result<T> {
    Err(SimError::Config(what.into()))
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    SimConfig::from_toml_str(&text).map_err(|e| match e {
        SimError::ConfigParse(msg) => SimError::ConfigParse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as strings.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.trim().parse().map_err(serde::de::Error::custom),
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration, which re-loads to an identical value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the resolved echo, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.drops == 0 {
            return invalid("drops must be at least 1");
        }
        if self.policies.is_empty() {
            return invalid("policies must name at least one scheduler");
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return invalid(format!("policy {p} listed twice"));
            }
        }

        let d = &self.deployment;
        if d.cells == 0 {
            return invalid("deployment.cells must be at least 1");
        }
        if d.wraparound && hex_rings(d.cells.div_ceil(3)).is_none() {
            return invalid(format!(
                "deployment.wraparound needs a full hexagon of sites (3, 21 or 57 cells), got {} cells",
                d.cells
            ));
        }
        if !(d.isd_m > 0.0) {
            return invalid("deployment.isd_m must be positive");
        }
        for o in self.omegas() {
            if o.embb + o.urllc == 0 {
                return invalid("every cell loading needs at least one user");
            }
        }

        self.carrier.validate()?;
        self.antennas.validate()?;
        if !self.antennas.needs_svd_feedback() {
            dual_codebook(self.antennas.n_tx, self.feedback.b1, self.feedback.b2)
                .map_err(|e| SimError::Config(format!("feedback codebook: {e}")))?;
        }

        let ch = &self.channel;
        if !(ch.shadowing_std_db >= 0.0) || !(ch.min_distance_m > 0.0) || !(ch.min_distance_m < d.isd_m / 2.0) {
            return invalid("channel needs shadowing_std_db >= 0 and 0 < min_distance_m < isd_m / 2");
        }
        if !(ch.sector_beamwidth_deg > 0.0) || !(ch.sector_max_attenuation_db >= 0.0) || !ch.cell_edge_snr_db.is_finite() {
            return invalid("channel sector pattern parameters out of range");
        }

        let c = &self.cqi;
        if !(c.xi > 0.0 && c.xi <= 1.0) {
            return invalid(format!("cqi.xi must lie in (0, 1], got {}", c.xi));
        }
        if !(c.periodicity_ms >= self.carrier.minislot_ms) || !(c.delay_ms >= 0.0) {
            return invalid("cqi.periodicity_ms must cover at least one mini-slot and cqi.delay_ms must be >= 0");
        }
        if !(c.mu_offset_db >= 0.0) {
            return invalid("cqi.mu_offset_db must be >= 0");
        }

        if self.harq.rtt_ttis == 0 || self.harq.embb_max_tx == 0 {
            return invalid("harq.rtt_ttis and harq.embb_max_tx must be at least 1");
        }

        let l = &self.link;
        for (name, t) in [("urllc_bler_target", l.urllc_bler_target), ("embb_bler_target", l.embb_bler_target)] {
            if !(t > 0.0 && t < 1.0) {
                return invalid(format!("link.{name} must lie in (0, 1), got {t}"));
            }
        }
        if !(l.bler_slope_db > 0.0) || !(l.max_code_rate > 0.0 && l.max_code_rate <= 1.0) {
            return invalid("link.bler_slope_db must be positive and link.max_code_rate in (0, 1]");
        }
        if !l.backoff_db_at_1pct.is_finite() || !l.olla_offset_db.is_finite() {
            return invalid("link backoff and OLLA offset must be finite");
        }
        if let Some(path) = &l.mcs_table {
            McsTable::load(path, l.max_code_rate)?;
        }

        let t = &self.traffic;
        if !(t.urllc.lambda >= 0.0) || t.urllc.payload_bytes == 0 || !(t.urllc.drop_deadline_ms > 0.0) {
            return invalid("traffic.urllc needs lambda >= 0, payload_bytes > 0 and drop_deadline_ms > 0");
        }
        if !(t.processing_offset_ms >= 0.0) {
            return invalid("traffic.processing_offset_ms must be >= 0");
        }

        let s = &self.scheduler;
        if s.mu_rank == 0 || s.mu_rank > self.antennas.n_tx {
            return invalid(format!("scheduler.mu_rank must lie in 1..={}", self.antennas.n_tx));
        }
        self.weights().validate()?;
        if !(0.0..=1.0).contains(&s.d_min) {
            return invalid(format!("scheduler.d_min must lie in [0, 1], got {}", s.d_min));
        }
        if !(0.0..=90.0).contains(&s.theta_deg) {
            return invalid(format!("scheduler.theta_deg must lie in [0, 90], got {}", s.theta_deg));
        }
        if !(s.pf_horizon_ttis >= 1.0) {
            return invalid("scheduler.pf_horizon_ttis must be >= 1");
        }

        let e = &self.engine;
        if !(e.warmup_ms >= 0.0) || !(e.duration_ms > 0.0) {
            return invalid("engine.warmup_ms must be >= 0 and engine.duration_ms > 0");
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<Omega> {
        if self.deployment.omegas.is_empty() {
            vec![Omega::new(self.deployment.embb_users, self.deployment.urllc_users)]
        } else {
            self.deployment.omegas.clone()
        }
    }

    /// Cartesian product of policies and cell loadings, policy-major.
    pub fn run_specs(&self) -> Vec<RunSpec> {
        let omegas = self.omegas();
        self.policies.iter().flat_map(|&policy| omegas.iter().map(move |&omega| RunSpec { policy, omega })).collect()
    }

    /// Overrides one dotted key with a TOML literal (bare words are taken as strings).
    pub fn set_dotted(&mut self, key: &str, value: &str) -> Result<()> {
        let literal: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| SimError::Config(format!("{key} is not a table path")))?;
            if i + 1 == parts.len() {
                if !table.contains_key(*part) && !(key == "link.mcs_table") {
                    return Err(SimError::Config(format!("unknown key {key}")));
                }
                table.insert(part.to_string(), literal);
                break;
            }
            node = table.get_mut(*part).ok_or_else(|| SimError::Config(format!("unknown key {key}")))?;
        }
        let text = toml::to_string(&root).map_err(|e| SimError::ConfigParse(e.to_string()))?;
        *self = SimConfig::from_toml_str(&text)?;
        Ok(())
    }

    pub fn weights(&self) -> SchedulerWeights {
        SchedulerWeights { alpha_urllc: self.scheduler.alpha_urllc, alpha_embb: self.scheduler.alpha_embb }
    }

    pub fn mcs_table(&self) -> Result<McsTable> {
        match &self.link.mcs_table {
            Some(path) => McsTable::load(path, self.link.max_code_rate),
            None => Ok(McsTable::standard(self.link.max_code_rate)),
        }
    }

    pub fn bler_model(&self) -> BlerModel {
        BlerModel {
            slope_db: self.link.bler_slope_db,
            max_code_rate: self.link.max_code_rate,
            deterministic: self.link.deterministic_bler,
        }
    }

    pub fn cqi_timing(&self) -> CqiTiming {
        CqiTiming {
            period_ticks: self.carrier.ms_to_ticks(self.cqi.periodicity_ms).max(1),
            delay_ticks: self.carrier.ms_to_ticks(self.cqi.delay_ms),
        }
    }

    pub fn scheduler_config(&self, policy: Policy) -> Result<SchedulerConfig> {
        Ok(SchedulerConfig {
            policy,
            carrier: self.carrier,
            weights: self.weights(),
            mu_rank: self.scheduler.mu_rank,
            d_min: self.scheduler.d_min,
            theta_deg: self.scheduler.theta_deg,
            urllc_bler_target: self.link.urllc_bler_target,
            embb_bler_target: self.link.embb_bler_target,
            backoff: BlerBackoff { db_at_1pct: self.link.backoff_db_at_1pct },
            olla_offset_db: self.link.olla_offset_db,
            power_budget: 1.0,
            mcs: self.mcs_table()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = SimConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, SimConfig::default());
        assert_eq!(cfg.cqi.xi, 0.01);
        assert_eq!(cfg.cqi.mu_offset_db, 3.0);
        assert_eq!(cfg.traffic.urllc.lambda, 250.0);
        assert_eq!(cfg.traffic.urllc.payload_bytes, 50);
        assert_eq!(cfg.scheduler.mu_rank, 2);
        assert_eq!(cfg.harq.rtt_ttis, 4);
        let t = cfg.cqi_timing();
        assert_eq!((t.period_ticks, t.delay_ticks), (35, 14));
    }

    #[test]
    fn dotted_and_nested_keys_agree() {
        let a = SimConfig::from_toml_str("traffic.urllc.lambda = 100\ncqi.xi = 0.5").unwrap();
        let b = SimConfig::from_toml_str("[traffic.urllc]\nlambda = 100\n[cqi]\nxi = 0.5").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.traffic.urllc.lambda, 100.0);
    }

    #[test]
    fn validation_names_the_violated_bound() {
        let err = SimConfig::from_toml_str("cqi.xi = 1.5").unwrap_err().to_string();
        assert!(err.contains("cqi.xi"), "{err}");
        assert!(matches!(SimConfig::from_toml_str("bogus = 1"), Err(SimError::ConfigParse(_))));
        assert!(SimConfig::from_toml_str("scheduler.alpha_urllc = 2").is_err());
        assert!(SimConfig::from_toml_str("deployment.cells = 6").is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = SimConfig::from_toml_str("seed = 1\ndrops = \"x\"").unwrap_err().to_string();
        assert!(err.contains("line 2") || err.contains("drops"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = SimConfig::default();
        cfg.deployment.omegas = vec![Omega::new(5, 5), Omega::new(20, 5)];
        cfg.link.deterministic_bler = true;
        let back = SimConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn run_specs_are_the_cartesian_product() {
        let mut cfg = SimConfig::default();
        cfg.policies = vec![Policy::Ps, Policy::Mups];
        cfg.deployment.omegas = vec![Omega::new(5, 5), Omega::new(10, 10), Omega::new(20, 5)];
        assert_eq!(cfg.run_specs().len(), 6);
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = SimConfig::default();
        cfg.set_dotted("scheduler.theta_deg", "45").unwrap();
        assert_eq!(cfg.scheduler.theta_deg, 45.0);
        cfg.set_dotted("engine.duration_ms", "100.0").unwrap();
        assert_eq!(cfg.engine.duration_ms, 100.0);
        assert!(cfg.set_dotted("scheduler.nope", "1").is_err());
        assert!(cfg.set_dotted("cqi.xi", "2").is_err());
    }

    #[test]
    fn omega_parsing() {
        assert_eq!("20x5".parse::<Omega>().unwrap(), Omega::new(20, 5));
        assert_eq!("(10,10)".parse::<Omega>().unwrap(), Omega::new(10, 10));
        assert!("ten".parse::<Omega>().is_err());
    }
}
