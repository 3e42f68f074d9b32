//! Preconditioned conjugate gradient workload.
//!
//! The solver's six data structures (matrix `A`, right-hand side `b`, Jacobi
//! preconditioner `M`, iterate `x`, search direction `p` and residual `r`)
//! each live in their own haven. A [`Placement`] decides which of those
//! havens are parity protected; the rest are plain. Every access goes through
//! the arena barriers, so a fault-free solve performs the same arithmetic
//! whatever the placement.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

mod direct;
mod pcg;
mod poisson;

pub use direct::{reference_cg, solve_banded_spd};
pub use pcg::{
    pcg_solve, validate, AbortReason, CgLayout, Classification, SolveOptions, TrialOutcome,
};
pub use poisson::{build_poisson, MAX_GRID};

use crate::arena::WORD_BYTES;
use crate::{HavenError, Result};

/// Sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    /// Dimension (the matrix is square).
    pub n: usize,
    /// `n + 1` offsets into `col_indices` / `values`.
    pub row_offsets: Vec<usize>,
    /// Column of each stored entry, ascending within a row.
    pub col_indices: Vec<usize>,
    /// Value of each stored entry.
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `A * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(HavenError::DimensionMismatch {
                left: self.n,
                right: v.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| self.row(i).map(|(j, a)| a * v[j]).sum())
            .collect())
    }

    /// Diagonal entries (zero where not stored).
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, a)| a);
        }
        d
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, a)| self.row(j).any(|(k, b)| k == i && b == a))
        })
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Storage of offsets, indices and values, one word each.
    pub fn bytes(&self) -> usize {
        (self.row_offsets.len() + self.col_indices.len() + self.values.len()) * WORD_BYTES
    }
}

/// A sparse SPD system with its fault-free reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct CgProblem {
    /// System matrix.
    pub matrix: CsrMatrix,
    /// Right-hand side.
    pub rhs: Vec<f64>,
    /// Jacobi preconditioner: the diagonal of the matrix.
    pub preconditioner: Vec<f64>,
    /// Solution the right-hand side was generated from.
    pub exact: Vec<f64>,
    /// Fault-free solution used to validate solver output.
    pub reference: Vec<f64>,
    /// Relative residual at which the solver stops.
    pub tol: f64,
    /// Iteration budget.
    pub max_iters: usize,
}

impl CgProblem {
    /// Dimension.
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    /// Replaces the convergence tolerance.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Replaces the iteration budget.
    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    /// Bytes of one structure as laid out in the arena.
    pub fn structure_bytes(&self, s: Structure) -> usize {
        match s {
            Structure::A => self.matrix.bytes(),
            _ => self.n() * WORD_BYTES,
        }
    }

    /// Bytes of the two scratch vectors (preconditioned residual and `A p`).
    pub fn scratch_bytes(&self) -> usize {
        2 * self.n() * WORD_BYTES
    }

    /// All data the solver touches: the six structures plus scratch.
    pub fn active_bytes(&self) -> usize {
        Structure::ALL
            .iter()
            .map(|&s| self.structure_bytes(s))
            .sum::<usize>()
            + self.scratch_bytes()
    }

    /// `‖A·v − b‖₂ / ‖b‖₂`.
    pub fn relative_residual(&self, v: &[f64]) -> Result<f64> {
        let av = self.matrix.mul_vec(v)?;
        let rr: f64 = av
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        let bb: f64 = self.rhs.iter().map(|b| b * b).sum();
        Ok(libm::sqrt(rr / bb))
    }
}

/// One of the solver's placeable data structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    /// Operand matrix.
    A,
    /// Right-hand side.
    B,
    /// Preconditioner.
    M,
    /// Iterate.
    X,
    /// Search direction.
    P,
    /// Residual.
    R,
}

impl Structure {
    /// All six, in layout order.
    pub const ALL: [Structure; 6] = [
        Structure::A,
        Structure::B,
        Structure::M,
        Structure::X,
        Structure::P,
        Structure::R,
    ];

    /// Conventional symbol.
    pub fn name(self) -> &'static str {
        match self {
            Structure::A => "A",
            Structure::B => "b",
            Structure::M => "M",
            Structure::X => "x",
            Structure::P => "p",
            Structure::R => "r",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = HavenError;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or(HavenError::Config(
                "unknown structure; expected one of A, b, M, x, p, r",
            ))
    }
}

/// Which structures are parity protected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Placement(u8);

impl Placement {
    /// Nothing protected.
    pub const NONE: Placement = Placement(0);
    /// Everything protected.
    pub const ALL: Placement = Placement(0b11_1111);

    /// Protects exactly the listed structures.
    pub fn of(structures: &[Structure]) -> Self {
        Placement(structures.iter().fold(0, |acc, s| acc | s.bit()))
    }

    /// Static state: `A`, `b` and `M`.
    pub fn static_state() -> Self {
        Self::of(&[Structure::A, Structure::B, Structure::M])
    }

    /// Operands only: `A` and `b`.
    pub fn operands() -> Self {
        Self::of(&[Structure::A, Structure::B])
    }

    /// Dynamic state: `x`, `p` and `r`.
    pub fn dynamic_state() -> Self {
        Self::of(&[Structure::X, Structure::P, Structure::R])
    }

    /// Whether `s` is protected.
    pub fn protects(self, s: Structure) -> bool {
        self.0 & s.bit() != 0
    }

    /// Protected structures, in layout order.
    pub fn protected(self) -> impl Iterator<Item = Structure> {
        Structure::ALL
            .into_iter()
            .filter(move |&s| self.protects(s))
    }

    /// Number of protected structures.
    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count() == 0 {
            return f.write_str("-");
        }
        for (i, s) in self.protected().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            f.write_str(s.name())?;
        }
        Ok(())
    }
}
