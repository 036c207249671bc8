//! MIMO channel realizations, CSI feedback and the channel-hardening statistic.
//!
//! Channels follow a Kronecker-correlated Rayleigh model,
//! `H = √g · R_rx^{1/2} G R_tx^{1/2}`, where `G` has i.i.d. CN(0,1) entries and
//! the correlation matrices are complex exponential: `R[i][k] = r^{|i-k|} e^{jφ(i-k)}`
//! with `φ = 2π·spacing·sin(angle)`. The phase term steers the dominant transmit
//! eigen-direction towards the user, which is what makes users spatially separable.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{self, CMatrix, CVector};
use crate::phy::{Precoder, PrecoderOrigin};

/// One user ↔ cell link on one subband.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    /// `M_r × N_t`.
    pub entries: CMatrix,
    pub user_id: usize,
    pub cell_id: usize,
    pub subband_id: usize,
}

impl ChannelMatrix {
    pub fn new(entries: CMatrix, user_id: usize, cell_id: usize, subband_id: usize) -> Self {
        Self { entries, user_id, cell_id, subband_id }
    }

    pub fn n_rx(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.entries.ncols()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        linalg::frobenius_norm_sq(&self.entries)
    }
}

/// Large-scale link parameters.
///
/// The linear gain handed to the fast-fading generator is
/// `link_budget_db − pathloss_db − shadowing_db + antenna_gain_db`, where the
/// link budget is the per-PRB transmit power over the per-PRB noise power.
/// With noise normalized to one, the resulting gain is directly the per-antenna SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub distance_m: f64,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    /// Sector pattern attenuation (≤ 0).
    pub antenna_gain_db: f64,
    pub link_budget_db: f64,
    /// Departure angle relative to the array broadside, degrees.
    pub angle_deg: f64,
}

impl LinkGeometry {
    /// Geometry whose linear gain is exactly `gain` at broadside.
    pub fn with_gain(gain: f64) -> Self {
        Self {
            distance_m: 1.0,
            pathloss_db: 0.0,
            shadowing_db: 0.0,
            antenna_gain_db: 0.0,
            link_budget_db: linalg::linear_to_db(gain),
            angle_deg: 0.0,
        }
    }

    pub fn gain_db(&self) -> f64 {
        self.link_budget_db - self.pathloss_db - self.shadowing_db + self.antenna_gain_db
    }

    pub fn linear_gain(&self) -> f64 {
        linalg::db_to_linear(self.gain_db())
    }
}

/// Log-distance macro pathloss, `128.1 + 37.6·log10(d_km)`.
pub fn macro_pathloss_db(distance_m: f64) -> f64 {
    128.1 + 37.6 * (distance_m / 1000.0).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntennaConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub element_spacing_wavelengths: f64,
    pub tx_correlation: f64,
    pub rx_correlation: f64,
}

impl Default for AntennaConfig {
    fn default() -> Self {
        Self { n_tx: 8, n_rx: 2, element_spacing_wavelengths: 0.5, tx_correlation: 0.9, rx_correlation: 0.5 }
    }
}

impl AntennaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(SimError::Config("antenna counts must be at least 1".into()));
        }
        for (name, r) in [("tx_correlation", self.tx_correlation), ("rx_correlation", self.rx_correlation)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SimError::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(self.element_spacing_wavelengths > 0.0) {
            return Err(SimError::Config("element spacing must be positive".into()));
        }
        Ok(())
    }

    /// True when no standard quantization codebook exists for this array.
    pub fn needs_svd_feedback(&self) -> bool {
        self.n_tx > 8 || self.n_rx > 8 || self.n_tx % 2 == 1
    }
}

/// Complex exponential correlation matrix of an `n`-element ULA.
pub fn exponential_correlation(n: usize, coeff: f64, spacing: f64, angle_deg: f64) -> CMatrix {
    let phase = 2.0 * PI * spacing * angle_deg.to_radians().sin();
    CMatrix::from_fn(n, n, |i, k| {
        let d = i as i64 - k as i64;
        let mag = if d == 0 { 1.0 } else { coeff.powi(d.unsigned_abs() as i32) };
        Complex64::from_polar(mag, phase * d as f64)
    })
}

/// Pre-computed correlation square roots for one user ↔ cell link.
///
/// Subbands of the same link share the large-scale state and only redraw `G`.
#[derive(Debug, Clone)]
pub struct CorrelatedRayleigh {
    rx_sqrt: CMatrix,
    tx_sqrt: CMatrix,
    amplitude: f64,
}

impl CorrelatedRayleigh {
    pub fn new(geometry: &LinkGeometry, antennas: &AntennaConfig) -> Self {
        let s = antennas.element_spacing_wavelengths;
        let rx = exponential_correlation(antennas.n_rx, antennas.rx_correlation, s, 0.0);
        let tx = exponential_correlation(antennas.n_tx, antennas.tx_correlation, s, geometry.angle_deg);
        Self {
            rx_sqrt: linalg::hermitian_sqrt(&rx),
            tx_sqrt: linalg::hermitian_sqrt(&tx),
            amplitude: geometry.linear_gain().sqrt(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CMatrix {
        let (m, n) = (self.rx_sqrt.nrows(), self.tx_sqrt.nrows());
        let g = CMatrix::from_fn(m, n, |_, _| complex_gaussian(rng));
        if self.amplitude == 0.0 {
            return CMatrix::zeros(m, n);
        }
        (&self.rx_sqrt * g * &self.tx_sqrt) * Complex64::new(self.amplitude, 0.0)
    }
}

/// One CN(0, 1) sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn generate_channel<R: Rng + ?Sized>(geometry: &LinkGeometry, antennas: &AntennaConfig, rng: &mut R) -> ChannelMatrix {
    ChannelMatrix::new(CorrelatedRayleigh::new(geometry, antennas).draw(rng), 0, 0, 0)
}

/// A precoding codebook: `2^bits` complex codewords of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codewords: Vec<CMatrix>,
    bits: u32,
}

impl Codebook {
    pub fn new(codewords: Vec<CMatrix>, bits: u32) -> Result<Self> {
        if codewords.len() != 1usize << bits {
            return Err(SimError::DimensionMismatch(format!(
                "codebook with {bits} bits needs {} codewords, got {}",
                1usize << bits,
                codewords.len()
            )));
        }
        let shape = codewords[0].shape();
        for (i, w) in codewords.iter().enumerate() {
            if w.shape() != shape {
                return Err(SimError::DimensionMismatch(format!("codeword {i} has shape {:?}, expected {shape:?}", w.shape())));
            }
            for c in 0..w.ncols() {
                let n = w.column(c).norm_squared();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(SimError::DimensionMismatch(format!("codeword {i} column {c} has norm² {n}")));
                }
            }
        }
        Ok(Self { codewords, bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codewords(&self) -> &[CMatrix] {
        &self.codewords
    }

    /// `(rows, cols)` of every codeword.
    pub fn shape(&self) -> (usize, usize) {
        self.codewords[0].shape()
    }
}

/// Wideband beam-group codebook for a dual-polarized array of `n_tx` ports.
///
/// Each codeword is `blockdiag(X, X)` where `X` holds `beams_per_group`
/// adjacent oversampled DFT beams of length `n_tx/2`. Consecutive groups
/// overlap by half a group, as in the LTE 8-port design.
pub fn beam_group_codebook(n_tx: usize, bits: u32, beams_per_group: usize) -> Result<Codebook> {
    if n_tx < 2 || n_tx % 2 == 1 {
        return Err(SimError::DimensionMismatch(format!("dual codebook needs an even port count, got {n_tx}")));
    }
    let half = n_tx / 2;
    let stride = (beams_per_group / 2).max(1);
    let n_beams = (1usize << bits) * stride;
    let norm = (half as f64).sqrt();
    let beam = |m: usize, n: usize| Complex64::from_polar(1.0 / norm, 2.0 * PI * (m * n) as f64 / n_beams as f64);
    let words = (0..1usize << bits)
        .map(|g| {
            let mut w = CMatrix::zeros(n_tx, 2 * beams_per_group);
            for b in 0..beams_per_group {
                let m = (g * stride + b) % n_beams;
                for n in 0..half {
                    w[(n, b)] = beam(m, n);
                    w[(half + n, beams_per_group + b)] = beam(m, n);
                }
            }
            w
        })
        .collect();
    Codebook::new(words, bits)
}

/// Beam selection plus QPSK co-phasing between the two polarizations.
/// Codewords are `[e_i; φ·e_i]/√2`, with `2^bits / 4` selectable beams.
pub fn cophasing_codebook(bits: u32) -> Result<Codebook> {
    if bits < 2 {
        return Err(SimError::DimensionMismatch("co-phasing codebook needs at least 2 bits".into()));
    }
    let beams = 1usize << (bits - 2);
    let phases = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, -1.0)];
    let mut words = Vec::with_capacity(beams * 4);
    for i in 0..beams {
        for phi in phases {
            let mut w = CMatrix::zeros(2 * beams, 1);
            w[(i, 0)] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            w[(beams + i, 0)] = phi * std::f64::consts::FRAC_1_SQRT_2;
            words.push(w);
        }
    }
    Codebook::new(words, bits)
}

/// The `(Λ₁, Λ₂)` pair used by default: `b1`-bit beam groups, `b2`-bit co-phasing.
pub fn dual_codebook(n_tx: usize, b1: u32, b2: u32) -> Result<(Codebook, Codebook)> {
    let cb2 = cophasing_codebook(b2)?;
    let cb1 = beam_group_codebook(n_tx, b1, 1 << (b2 - 2))?;
    Ok((cb1, cb2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPrecoder {
    pub precoder: Precoder,
    /// `(j, m)`: indices into Λ₁ and Λ₂.
    pub indices: (usize, usize),
    /// `‖Ĥ V‖²` of the selected composition.
    pub score: f64,
}

/// Selects the codeword pair whose composition `W₁·W₂` captures the most channel energy.
///
/// The search is joint over both codebooks, so the result is the global maximum
/// of `‖Ĥ W₁ W₂‖²` rather than the greedy per-stage choice.
pub fn quantize_dual_codebook(h: &ChannelMatrix, cb1: &Codebook, cb2: &Codebook) -> Result<QuantizedPrecoder> {
    let (rows1, cols1) = cb1.shape();
    let (rows2, cols2) = cb2.shape();
    if rows1 != h.n_tx() || cols1 != rows2 || cols2 != 1 {
        return Err(SimError::DimensionMismatch(format!(
            "channel has {} ports, Λ₁ codewords are {rows1}×{cols1}, Λ₂ codewords are {rows2}×{cols2}",
            h.n_tx()
        )));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (j, w1) in cb1.codewords().iter().enumerate() {
        let hw1 = &h.entries * w1;
        for (m, w2) in cb2.codewords().iter().enumerate() {
            let score = linalg::frobenius_norm_sq(&(&hw1 * w2));
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, j, m));
            }
        }
    }
    let (_, j, m) = best.expect("codebooks are non-empty");
    let composed: CVector = (&cb1.codewords()[j] * &cb2.codewords()[m]).column(0).into_owned();
    let vector = linalg::normalized(&composed)
        .ok_or_else(|| SimError::DimensionMismatch("codeword composition is the zero vector".into()))?;
    let score = linalg::vector_norm_sq(&linalg::mat_vec(&h.entries, &vector));
    Ok(QuantizedPrecoder { precoder: Precoder::new(vector, PrecoderOrigin::Codebook), indices: (j, m), score })
}

/// Unquantized feedback: the dominant right singular vector of `H`.
pub fn svd_feedback(h: &ChannelMatrix) -> Result<Precoder> {
    if h.frobenius_norm_sq() == 0.0 {
        return Err(SimError::DegenerateChannel("cannot decompose the zero channel"));
    }
    let svd = h.entries.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best });
    let v: CVector = v_t.row(k).adjoint();
    let v = linalg::normalized(&v).ok_or(SimError::DegenerateChannel("dominant singular vector vanished"))?;
    Ok(Precoder::new(linalg::canonical_phase(&v), PrecoderOrigin::Svd))
}

/// Channel-hardening measure of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Hardening {
    /// Ensemble variance of `‖H‖²/E‖H‖²`, divided by `min(N_t, M_r)`.
    pub statistic: f64,
    /// Per-realization `‖H‖²/E‖H‖² / min(N_t, M_r)`.
    pub per_realization: Vec<f64>,
}

pub fn hardening_statistic(samples: &[ChannelMatrix]) -> Result<Hardening> {
    let shape = samples.first().map_or((0, 0), |s| s.entries.shape());
    if let Some(bad) = samples.iter().find(|s| s.entries.shape() != shape) {
        return Err(SimError::ShapeMismatch { expected: shape, got: bad.entries.shape() });
    }
    let norms: Vec<f64> = samples.iter().map(ChannelMatrix::frobenius_norm_sq).collect();
    hardening_from_energies(&norms, shape)
}

/// Same statistic from the energies `‖H‖²` of an ensemble of `shape` channels,
/// for ensembles too large to hold in memory.
pub fn hardening_from_energies(norms: &[f64], shape: (usize, usize)) -> Result<Hardening> {
    if norms.len() < 2 {
        return Err(SimError::InsufficientSamples { needed: 2, got: norms.len() });
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(SimError::DegenerateChannel("ensemble has zero mean energy"));
    }
    let dof = shape.0.min(shape.1) as f64;
    let normalized: Vec<f64> = norms.iter().map(|x| x / mean).collect();
    let var = normalized.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Hardening { statistic: var / dof, per_realization: normalized.iter().map(|x| x / dof).collect() })
}
