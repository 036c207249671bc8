//! Random inputs and independent reference computations shared by the test targets.
#![allow(dead_code)]

use mups_sim::linalg::{CMatrix, CVector};
use mups_sim::phy::Precoder;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn cn<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cn(rng))
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| cn(rng))
}

pub fn random_unit<R: Rng>(rng: &mut R, n: usize) -> CVector {
    let v = random_vector(rng, n);
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.map(|x| x / norm)
}

pub fn random_precoder<R: Rng>(rng: &mut R, n: usize) -> Precoder {
    Precoder::unit(random_unit(rng, n))
}

/// Owned storage for a random transmission context.
pub struct Scene {
    pub h: CMatrix,
    pub v: CVector,
    pub p: f64,
    pub intra: Vec<(CVector, f64)>,
    pub inter: Vec<(CMatrix, CVector, f64)>,
}

impl Scene {
    pub fn random<R: Rng>(rng: &mut R, n_tx: usize, n_rx: usize, n_intra: usize, n_inter: usize) -> Self {
        let gain = |rng: &mut R| 10f64.powf(rng.random_range(-1.0..2.0));
        Scene {
            h: random_matrix(rng, n_rx, n_tx).map(|x| x * 3.0),
            v: random_unit(rng, n_tx),
            p: gain(rng),
            intra: (0..n_intra).map(|_| (random_unit(rng, n_tx), gain(rng))).collect(),
            inter: (0..n_inter).map(|_| (random_matrix(rng, n_rx, n_tx), random_unit(rng, n_tx), gain(rng))).collect(),
        }
    }
}

fn mul(h: &CMatrix, v: &CVector) -> Vec<Complex64> {
    (0..h.nrows()).map(|r| (0..h.ncols()).map(|c| h[(r, c)] * v[c]).sum()).collect()
}

fn dot(u: &[Complex64], x: &[Complex64]) -> Complex64 {
    u.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

/// Effective desired channel and interferers, computed entry by entry.
fn effective(s: &Scene) -> (Vec<Complex64>, Vec<(Vec<Complex64>, f64)>) {
    let mut ints: Vec<(Vec<Complex64>, f64)> = s.intra.iter().map(|(v, p)| (mul(&s.h, v), *p)).collect();
    ints.extend(s.inter.iter().map(|(h, v, p)| (mul(h, v), *p)));
    (mul(&s.h, &s.v), ints)
}

/// Post-combining SINR with unit noise, summed term by term.
pub fn brute_sinr(s: &Scene, u: &[Complex64]) -> f64 {
    let (h, ints) = effective(s);
    let noise: f64 = u.iter().map(|x| x.norm_sqr()).sum();
    let interference: f64 = ints.iter().map(|(g, p)| p * dot(u, g).norm_sqr()).sum();
    s.p * dot(u, &h).norm_sqr() / (noise + interference)
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for k in 0..n {
            a[col][k] /= d;
        }
        b[col] /= d;
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                for k in 0..n {
                    let t = a[col][k];
                    a[r][k] -= f * t;
                }
                let t = b[col];
                b[r] -= f * t;
            }
        }
    }
    b
}

/// Optimal linear-receiver SINR `p·hᴴR⁻¹h`, `R = Σ p_g h_g h_gᴴ + I`.
pub fn brute_irc_sinr(s: &Scene) -> f64 {
    let (h, ints) = effective(s);
    let m = h.len();
    let mut r = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
        for (g, p) in &ints {
            for (j, x) in row.iter_mut().enumerate() {
                *x += g[i] * g[j].conj() * *p;
            }
        }
    }
    let x = gauss_solve(r, h.clone());
    s.p * dot(&h, &x).re
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
