//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! The simulator only ever touches tiny matrices (at most 64×64, usually 2×8),
//! so everything here works on dynamically sized `DMatrix<Complex64>`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Relative diagonal loading applied before every inversion.
pub const REGULARIZATION: f64 = 1e-12;

pub fn frobenius_norm_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vector_norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `aᴴ b`.
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `H · v` without going through nalgebra's generic product machinery.
pub fn mat_vec(h: &CMatrix, v: &CVector) -> CVector {
    let (rows, cols) = h.shape();
    debug_assert_eq!(cols, v.len());
    CVector::from_fn(rows, |r, _| {
        let mut acc = ZERO;
        for c in 0..cols {
            acc += h[(r, c)] * v[c];
        }
        acc
    })
}

/// Returns `v / ‖v‖`, or `None` when the vector is (numerically) zero.
pub fn normalized(v: &CVector) -> Option<CVector> {
    let n = vector_norm_sq(v).sqrt();
    if n <= f64::MIN_POSITIVE || !n.is_finite() {
        return None;
    }
    Some(v.unscale(n))
}

/// Rotates `v` so that its largest-magnitude entry is real and positive.
///
/// Singular vectors are only defined up to a unit phase; fixing it keeps
/// feedback bit-identical across platforms and runs.
pub fn canonical_phase(v: &CVector) -> CVector {
    let pivot = v
        .iter()
        .copied()
        .fold(ZERO, |best, z| if z.norm_sqr() > best.norm_sqr() { z } else { best });
    if pivot.norm_sqr() == 0.0 {
        return v.clone();
    }
    let rot = pivot.conj() / pivot.norm();
    v.map(|z| z * rot)
}

/// Solves `A x = b` for a (small) square `A` with diagonal loading.
pub fn solve_regularized(a: &CMatrix, b: &CVector) -> Option<CVector> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].norm()).fold(0.0, f64::max).max(1.0);
    let mut loaded = a.clone();
    for i in 0..n {
        loaded[(i, i)] += Complex64::new(REGULARIZATION * scale, 0.0);
    }
    let x = loaded.lu().solve(b)?;
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(x)
}

/// Hermitian positive semi-definite square root via eigendecomposition.
/// Negative eigenvalues from round-off are clamped to zero.
pub fn hermitian_sqrt(r: &CMatrix) -> CMatrix {
    let eig = r.clone().symmetric_eigen();
    let vecs = &eig.eigenvectors;
    let n = r.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += col[i] * col[j].conj() * s;
            }
        }
    }
    out
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let r = CMatrix::from_fn(3, 3, |i, j| {
            let d = i as i32 - j as i32;
            Complex64::from_polar(0.7f64.powi(d.abs()), 0.4 * d as f64)
        });
        let s = hermitian_sqrt(&r);
        let back = &s * &s;
        assert!(frobenius_norm_sq(&(back - &r)) < 1e-20);
    }

    #[test]
    fn regularized_solve_matches_direct() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(2.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0), Complex64::new(3.0, 0.0)],
        );
        let b = CVector::from_vec(vec![ONE, ZERO]);
        let x = solve_regularized(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(vector_norm_sq(&r) < 1e-20);
    }

    #[test]
    fn canonical_phase_is_idempotent() {
        let v = CVector::from_vec(vec![Complex64::new(0.0, 2.0), Complex64::new(-1.0, 0.5)]);
        let c = canonical_phase(&v);
        assert!(c[0].im.abs() < 1e-15 && c[0].re > 0.0);
        assert_eq!(canonical_phase(&c), c);
    }
}
