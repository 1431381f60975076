//! Small dense linear algebra on row-major `f64` buffers.
//!
//! Everything here is sized by the caller: neighbor systems are at most
//! `M x M`, the dense oracle paths are `n x n` with `n` guarded upstream.

use crate::error::{Error, Result};

/// Jitter added to the diagonal after a failed factorization.
pub const RETRY_JITTER: f64 = 1e-10;

/// In-place lower Cholesky of the leading `n x n` block of `a` (row-major,
/// stride `n`). Only the lower triangle is read; the upper triangle is zeroed.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    debug_assert!(a.len() >= n * n);
    for i in 0..n {
        for j in 0..=i {
            let (row_i, row_j) = (i * n, j * n);
            let s = a[row_i + j] - dot(&a[row_i..row_i + j], &a[row_j..row_j + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                a[row_i + i] = s.sqrt();
            } else {
                a[row_i + j] = s / a[row_j + j];
            }
        }
        for j in (i + 1)..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Cholesky with the fixed retry policy: one retry with [`RETRY_JITTER`] on
/// the diagonal, then give up. `scratch` must hold the original matrix; it is
/// overwritten by the factor.
pub fn cholesky_with_retry(original: &[f64], scratch: &mut [f64], n: usize) -> Result<()> {
    scratch[..n * n].copy_from_slice(&original[..n * n]);
    if cholesky_in_place(scratch, n).is_ok() {
        return Ok(());
    }
    scratch[..n * n].copy_from_slice(&original[..n * n]);
    for i in 0..n {
        scratch[i * n + i] += RETRY_JITTER;
    }
    cholesky_in_place(scratch, n)
}

/// Solve `L x = b` in place for lower-triangular `l`.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = b[i] - dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = s / l[i * n + i];
    }
}

/// Solve `L' x = b` in place for lower-triangular `l`.
pub fn backward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `(L L') x = b` in place.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    forward_substitute(l, n, b);
    backward_substitute(l, n, b);
}

/// `log det(L L')`.
pub fn cholesky_logdet(l: &[f64], n: usize) -> f64 {
    2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>()
}

/// Dot product with four independent accumulators.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Symmetric eigenvalues by cyclic Jacobi rotations. Intended for small test
/// matrices (`n` up to a few hundred).
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a[..n * n].to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Deterministic sum: fixed chunks of [`SUM_CHUNK`] summed left to right,
/// then chunk totals summed left to right. The result depends only on the
/// input order, never on how chunks are scheduled.
pub const SUM_CHUNK: usize = 256;

pub fn chunked_sum(values: &[f64]) -> f64 {
    values
        .chunks(SUM_CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .fold(0.0, |acc, s| acc + s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = [0.0; 9];
        cholesky_with_retry(&a, &mut l, 3).unwrap();
        let mut x = [1.0, 2.0, 3.0];
        cholesky_solve(&l, 3, &mut x);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        // det = 4*(15-1) - 2*(6-0.6) + 0.6*(2-3) = 44.6
        assert!((cholesky_logdet(&l, 3) - 44.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = [1.0, 2.0, 2.0, 1.0];
        let mut l = [0.0; 4];
        assert!(matches!(
            cholesky_with_retry(&a, &mut l, 2),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let a = [1.0, 1.0, 1.0, 1.0];
        let mut l = [0.0; 4];
        cholesky_with_retry(&a, &mut l, 2).unwrap();
        assert!(l[3] > 0.0 && l[3] < 1e-4);
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let mut e = symmetric_eigenvalues(&a, 2);
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }
}
