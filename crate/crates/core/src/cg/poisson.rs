use alloc::vec::Vec;

use super::{reference_cg, solve_banded_spd, CgProblem, CsrMatrix};
use crate::{HavenError, Result};

/// Largest grid side accepted by [`build_poisson`].
pub const MAX_GRID: usize = 4096;

/// Systems up to this dimension get a direct reference solve.
const DIRECT_LIMIT: usize = 4096;

const DEFAULT_TOL: f64 = 1e-8;
const DEFAULT_MAX_ITERS: usize = 1000;

/// 2-D five-point Laplacian on an `n_grid × n_grid` grid with Dirichlet
/// boundaries, a smooth synthetic solution and `b = A·x`.
///
/// Unknown `(i, j)` has index `i * n_grid + j`. The reference solution is a
/// banded direct solve up to dimension 4096 and a fault-free CG solve at a
/// tenth of the tolerance beyond that.
pub fn build_poisson(n_grid: usize) -> Result<CgProblem> {
    if n_grid < 2 {
        return Err(HavenError::Config("grid side must be at least 2"));
    }
    if n_grid > MAX_GRID {
        return Err(HavenError::Config("grid side too large"));
    }
    let n = n_grid * n_grid;

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(5 * n);
    let mut values = Vec::with_capacity(5 * n);
    row_offsets.push(0);
    for i in 0..n_grid {
        for j in 0..n_grid {
            let k = i * n_grid + j;
            let mut push = |col: usize, v: f64| {
                col_indices.push(col);
                values.push(v);
            };
            if i > 0 {
                push(k - n_grid, -1.0);
            }
            if j > 0 {
                push(k - 1, -1.0);
            }
            push(k, 4.0);
            if j + 1 < n_grid {
                push(k + 1, -1.0);
            }
            if i + 1 < n_grid {
                push(k + n_grid, -1.0);
            }
            row_offsets.push(col_indices.len());
        }
    }
    let matrix = CsrMatrix {
        n,
        row_offsets,
        col_indices,
        values,
    };

    let bump = |i: usize| {
        let t = (i + 1) as f64 / (n_grid + 1) as f64;
        4.0 * t * (1.0 - t)
    };
    let exact: Vec<f64> = (0..n)
        .map(|k| 1.0 + bump(k / n_grid) * bump(k % n_grid))
        .collect();
    let rhs = matrix.mul_vec(&exact)?;
    let reference = if n <= DIRECT_LIMIT {
        solve_banded_spd(&matrix, &rhs)?
    } else {
        reference_cg(&matrix, &rhs, DEFAULT_TOL / 10.0, 10 * n)?
    };

    let problem = CgProblem {
        preconditioner: matrix.diagonal(),
        matrix,
        rhs,
        exact,
        reference,
        tol: DEFAULT_TOL,
        max_iters: DEFAULT_MAX_ITERS,
    };
    let residual = problem.relative_residual(&problem.reference)?;
    if residual.is_nan() || residual > problem.tol / 10.0 {
        return Err(HavenError::Config("reference solve did not reach tol/10"));
    }
    Ok(problem)
}
