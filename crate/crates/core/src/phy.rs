//! SINR-level physical layer: precoders, LMMSE-IRC combining, post-combining
//! SINR, Shannon rates, zero-forcing and the spatial compatibility measures.
//!
//! Noise power is normalized to one everywhere; link gains carry the SNR.

use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::linalg::{self, CMatrix, CVector};

pub const NOISE_POWER: f64 = 1.0;

/// Smallest singular value of the stacked precoders below which ZF is refused.
pub const ZF_RANK_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecoderOrigin {
    Codebook,
    Svd,
    ZeroForcing,
}

/// Transmit beamformer `V` (`N_t × 1`).
///
/// Codebook and SVD precoders are unit norm; zero-forcing columns carry their
/// power in the norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub vector: CVector,
    pub origin: PrecoderOrigin,
}

impl Precoder {
    pub fn new(vector: CVector, origin: PrecoderOrigin) -> Self {
        Self { vector, origin }
    }

    pub fn unit(vector: CVector) -> Self {
        Self::new(vector, PrecoderOrigin::Codebook)
    }

    pub fn norm_sq(&self) -> f64 {
        linalg::vector_norm_sq(&self.vector)
    }

    /// Splits into a unit direction and a power, the form the SINR routines use.
    pub fn into_beam(self) -> Beam {
        let power = self.norm_sq();
        let direction = linalg::normalized(&self.vector).unwrap_or(self.vector);
        Beam { direction, power }
    }
}

/// Unit-norm transmit direction plus the power radiated along it.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub direction: CVector,
    pub power: f64,
}

impl Beam {
    pub fn new(direction: CVector, power: f64) -> Self {
        Self { direction, power }
    }
}

/// Receive combiner `U` (`M_r × 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub vector: CVector,
}

/// Everything that lands on one receiver on one PRB.
#[derive(Debug, Clone, Copy)]
pub struct TransmissionContext<'a> {
    /// Serving-cell channel, the user's own beam and its power.
    pub serving: (&'a CMatrix, &'a CVector, f64),
    /// Co-scheduled beams of the serving cell (seen through the serving channel).
    pub intra_cell: &'a [(&'a CVector, f64)],
    /// Beams of other cells, each with the channel from that cell to this receiver.
    pub inter_cell: &'a [(&'a CMatrix, &'a CVector, f64)],
}

impl TransmissionContext<'_> {
    /// η: number of co-scheduled users on the PRB, the receiver included.
    pub fn mu_rank(&self) -> usize {
        1 + self.intra_cell.len()
    }

    /// Effective channels `H·V` with their powers: desired first, then interferers.
    pub fn effective(&self) -> EffectiveLinks {
        let (h, v, p) = self.serving;
        let desired = (linalg::mat_vec(h, v), p);
        let mut interferers = Vec::with_capacity(self.intra_cell.len() + self.inter_cell.len());
        interferers.extend(self.intra_cell.iter().map(|&(vg, pg)| (linalg::mat_vec(h, vg), pg)));
        interferers.extend(self.inter_cell.iter().map(|&(hj, vg, pg)| (linalg::mat_vec(hj, vg), pg)));
        EffectiveLinks { desired, interferers }
    }
}

/// A context reduced to effective channel vectors.
#[derive(Debug, Clone)]
pub struct EffectiveLinks {
    pub desired: (CVector, f64),
    pub interferers: Vec<(CVector, f64)>,
}

impl EffectiveLinks {
    /// LMMSE-IRC: `U = (hhᴴ + W)⁻¹ h`, `W = E[hhᴴ] + Σ p_g h_g h_gᴴ + σ² I`.
    pub fn lmmse_irc(&self, noise_power: f64) -> Result<Combiner> {
        let h = &self.desired.0;
        let m = h.len();
        let mut a = CMatrix::zeros(m, m);
        add_outer(&mut a, h, 2.0);
        for (hg, pg) in &self.interferers {
            add_outer(&mut a, hg, *pg);
        }
        for i in 0..m {
            a[(i, i)] += Complex64::new(noise_power, 0.0);
        }
        if !linalg::is_finite(&a) {
            return Err(SimError::SingularCovariance);
        }
        let u = linalg::solve_regularized(&a, h).ok_or(SimError::SingularCovariance)?;
        Ok(Combiner { vector: u })
    }

    pub fn sinr(&self, u: &CVector) -> f64 {
        let (h, p) = &self.desired;
        let signal = p * linalg::inner(u, h).norm_sqr();
        if signal == 0.0 {
            return 0.0;
        }
        let interference: f64 = self.interferers.iter().map(|(hg, pg)| pg * linalg::inner(u, hg).norm_sqr()).sum();
        signal / (linalg::vector_norm_sq(u) * NOISE_POWER + interference)
    }

    /// SINR after LMMSE-IRC combining, the quantity the engine evaluates per PRB.
    pub fn irc_sinr(&self) -> f64 {
        match self.lmmse_irc(NOISE_POWER) {
            Ok(u) => self.sinr(&u.vector),
            Err(_) => 0.0,
        }
    }
}

fn add_outer(acc: &mut CMatrix, v: &CVector, scale: f64) {
    let m = v.len();
    for i in 0..m {
        for j in 0..m {
            acc[(i, j)] += v[i] * v[j].conj() * scale;
        }
    }
}

pub fn lmmse_irc_combiner(ctx: &TransmissionContext<'_>, noise_power: f64) -> Result<Combiner> {
    ctx.effective().lmmse_irc(noise_power)
}

/// Post-combining SINR with unit noise power.
pub fn compute_sinr(ctx: &TransmissionContext<'_>, combiner: &Combiner) -> f64 {
    ctx.effective().sinr(&combiner.vector)
}

/// Per-PRB Shannon rate `log₂(1 + SINR/η)` in bits/s/Hz.
pub fn prb_rate(sinr: f64, mu_rank: usize) -> f64 {
    (1.0 + sinr.max(0.0) / mu_rank.max(1) as f64).log2()
}

/// `V_zf = V_MU (V_MUᴴ V_MU)⁻¹ diag(√P)` with an equal power split.
///
/// The returned columns satisfy `V_MUᴴ V_zf = diag(√P)`, so each user sees
/// exactly its share `P` along its own precoder. Column norms exceed `√P` as the
/// inputs become collinear; that excess is radiated as extra interference.
pub fn zero_forcing(precoders: &[Precoder], power_budget: f64) -> Result<Vec<Precoder>> {
    let g = precoders.len();
    if g == 0 {
        return Err(SimError::DimensionMismatch("zero forcing needs at least one precoder".into()));
    }
    let n_tx = precoders[0].vector.len();
    if g > n_tx || precoders.iter().any(|p| p.vector.len() != n_tx) {
        return Err(SimError::DimensionMismatch(format!("cannot zero-force {g} precoders on {n_tx} ports")));
    }
    let v_mu = CMatrix::from_fn(n_tx, g, |r, c| precoders[c].vector[r]);
    let smallest = linalg::singular_values(&v_mu).last().copied().unwrap_or(0.0);
    if !(smallest > ZF_RANK_THRESHOLD) {
        return Err(SimError::RankDeficient { smallest_sv: smallest });
    }
    let gram = v_mu.adjoint() * &v_mu;
    let gram_inv = gram.try_inverse().ok_or(SimError::RankDeficient { smallest_sv: smallest })?;
    let sqrt_p = Complex64::new((power_budget / g as f64).sqrt(), 0.0);
    let v_zf = v_mu * gram_inv * sqrt_p;
    Ok((0..g)
        .map(|c| Precoder::new(v_zf.column(c).into_owned(), PrecoderOrigin::ZeroForcing))
        .collect())
}

/// `|aᴴb|` of the normalized inputs, clamped to [0, 1].
fn alignment(a: &CVector, b: &CVector) -> f64 {
    let na = linalg::vector_norm_sq(a);
    let nb = linalg::vector_norm_sq(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (linalg::inner(a, b).norm() / (na * nb).sqrt()).min(1.0)
}

/// Chordal distance `‖aaᴴ − bbᴴ‖_F / √2` between the lines spanned by `a` and `b`.
///
/// For unit vectors `‖aaᴴ − bbᴴ‖²_F = 2 − 2|aᴴb|²`, evaluated in that form.
pub fn chordal_distance(a: &Precoder, b: &Precoder) -> f64 {
    let c = alignment(&a.vector, &b.vector);
    (1.0 - c * c).max(0.0).sqrt()
}

/// Principal angle `arccos|aᴴb|` in degrees, in [0, 90].
pub fn angle_separation(a: &Precoder, b: &Precoder) -> f64 {
    alignment(&a.vector, &b.vector).acos().to_degrees()
}
