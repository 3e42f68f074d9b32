use alloc::vec;
use alloc::vec::Vec;

use super::CsrMatrix;
use crate::{HavenError, Result};

/// Solves `A·x = b` for symmetric positive definite banded `A` by an
/// `L·D·Lᵀ` factorisation in band storage. Cost is `O(n·w²)` for half
/// bandwidth `w`.
pub fn solve_banded_spd(matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.n;
    if rhs.len() != n {
        return Err(HavenError::DimensionMismatch {
            left: n,
            right: rhs.len(),
        });
    }
    let w = matrix.bandwidth();
    let stride = w + 1;
    // band[i * stride + (i - j)] holds L[i][j] for i - w <= j <= i
    let mut band = vec![0.0; n * stride];
    for i in 0..n {
        for (j, a) in matrix.row(i) {
            if j <= i {
                band[i * stride + (i - j)] = a;
            }
        }
    }
    let mut d = vec![0.0; n];
    for j in 0..n {
        let lo = j.saturating_sub(w);
        let mut dj = band[j * stride];
        for k in lo..j {
            let l = band[j * stride + (j - k)];
            dj -= l * l * d[k];
        }
        if dj.is_nan() || dj <= 0.0 {
            return Err(HavenError::Config("matrix is not positive definite"));
        }
        d[j] = dj;
        for i in j + 1..n.min(j + w + 1) {
            let mut v = band[i * stride + (i - j)];
            for k in i.saturating_sub(w)..j {
                v -= band[i * stride + (i - k)] * band[j * stride + (j - k)] * d[k];
            }
            band[i * stride + (i - j)] = v / dj;
        }
    }

    let mut x = rhs.to_vec();
    for i in 0..n {
        for k in i.saturating_sub(w)..i {
            x[i] -= band[i * stride + (i - k)] * x[k];
        }
    }
    for (xi, di) in x.iter_mut().zip(&d) {
        *xi /= di;
    }
    for i in (0..n).rev() {
        for k in i + 1..n.min(i + w + 1) {
            x[i] -= band[k * stride + (k - i)] * x[k];
        }
    }
    Ok(x)
}

/// Plain-memory Jacobi-preconditioned CG, used as the reference for systems
/// too large for the direct solve.
pub fn reference_cg(
    matrix: &CsrMatrix,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let n = matrix.n;
    if rhs.len() != n {
        return Err(HavenError::DimensionMismatch {
            left: n,
            right: rhs.len(),
        });
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let diag = matrix.diagonal();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bb = dot(rhs, rhs);
    for _ in 0..max_iters {
        if dot(&r, &r) <= tol * tol * bb {
            return Ok(x);
        }
        let q = matrix.mul_vec(&p)?;
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(HavenError::Config("reference CG did not converge"))
}
