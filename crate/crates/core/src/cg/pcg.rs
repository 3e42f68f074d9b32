use alloc::vec::Vec;

use super::{CgProblem, Placement, Structure};
use crate::arena::{Arena, BlockRef, HavenHandle, HavenStats, Protection, WORD_BYTES};
use crate::fault::TriggerHook;
use crate::{HavenError, Result};

/// Solver knobs beyond the problem itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Scrub every protected haven each `k` iterations. `None` relies on
    /// read-barrier detection alone.
    pub scrub_interval: Option<usize>,
}

/// How a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classification {
    /// Converged to the reference solution.
    Success,
    /// Converged, but to the wrong answer.
    WrongAnswer,
    /// Iteration budget exhausted or arithmetic broke down.
    NoConvergence,
    /// The run could not continue.
    Aborted,
}

impl Classification {
    /// Label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            Classification::Success => "Success",
            Classification::WrongAnswer => "WrongAnswer",
            Classification::NoConvergence => "NoConvergence",
            Classification::Aborted => "Aborted",
        }
    }

    /// Inverse of [`Classification::label`].
    pub fn from_label(label: &str) -> Option<Self> {
        [
            Self::Success,
            Self::WrongAnswer,
            Self::NoConvergence,
            Self::Aborted,
        ]
        .into_iter()
        .find(|c| c.label() == label)
    }
}

/// Why an aborted trial stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbortReason {
    /// A protected haven had two bad words at once.
    Unrecoverable(HavenError),
    /// A corrupted row offset or column index pointed outside the matrix;
    /// an unchecked native code would fault here.
    InvalidIndex,
}

/// Result of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Outcome class.
    pub classification: Classification,
    /// Stopping test satisfied.
    pub converged: bool,
    /// Final iterate within tolerance of the reference.
    pub correct: bool,
    /// Iterations run.
    pub iterations: usize,
    /// Restarts from a recomputed residual.
    pub restarts: usize,
    /// Counters summed over every haven of the layout.
    pub stats: HavenStats,
    /// Faults the hook injected.
    pub faults_injected: usize,
    /// `‖b − A·x‖ / ‖b‖` from the last residual the solver computed.
    pub relative_residual: f64,
    /// Set for aborted trials.
    pub abort: Option<AbortReason>,
    /// Final iterate, empty when aborted.
    pub solution: Vec<f64>,
}

/// Where each structure lives in the arena.
///
/// One haven per structure plus a plain haven for the two scratch vectors.
/// Sizes do not depend on the placement, so every placement of a problem
/// yields the same arena map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CgLayout {
    havens: [HavenHandle; 6],
    work: HavenHandle,
    row_offsets: BlockRef,
    col_indices: BlockRef,
    values: BlockRef,
    b: BlockRef,
    m: BlockRef,
    x: BlockRef,
    p: BlockRef,
    r: BlockRef,
    z: BlockRef,
    q: BlockRef,
    n: usize,
    nnz: usize,
}

impl CgLayout {
    /// Pages a layout of `problem` needs with the given page size.
    pub fn required_pages(problem: &CgProblem, page_size: usize) -> usize {
        Structure::ALL
            .iter()
            .map(|&s| problem.structure_bytes(s).div_ceil(page_size))
            .sum::<usize>()
            + problem.scratch_bytes().div_ceil(page_size)
    }

    /// Allocates every structure, writes the problem data through the
    /// barriers and zeroes the iterate.
    pub fn load(arena: &mut Arena, problem: &CgProblem, placement: Placement) -> Result<Self> {
        let n = problem.n();
        let nnz = problem.matrix.nnz();
        let havens = Structure::ALL.map(|s| {
            arena.create(if placement.protects(s) {
                Protection::Parity
            } else {
                Protection::None
            })
        });
        let work = arena.create(Protection::None);
        let [ha, hb, hm, hx, hp, hr] = havens;
        let vec_bytes = n * WORD_BYTES;
        let layout = Self {
            havens,
            work,
            row_offsets: arena.alloc(ha, (n + 1) * WORD_BYTES)?,
            col_indices: arena.alloc(ha, nnz * WORD_BYTES)?,
            values: arena.alloc(ha, nnz * WORD_BYTES)?,
            b: arena.alloc(hb, vec_bytes)?,
            m: arena.alloc(hm, vec_bytes)?,
            x: arena.alloc(hx, vec_bytes)?,
            p: arena.alloc(hp, vec_bytes)?,
            r: arena.alloc(hr, vec_bytes)?,
            z: arena.alloc(work, vec_bytes)?,
            q: arena.alloc(work, vec_bytes)?,
            n,
            nnz,
        };

        let m = &problem.matrix;
        for (i, &off) in m.row_offsets.iter().enumerate() {
            arena.write(ha, layout.row_offsets.word(i), off as u64)?;
        }
        for (k, (&col, &v)) in m.col_indices.iter().zip(&m.values).enumerate() {
            arena.write(ha, layout.col_indices.word(k), col as u64)?;
            arena.write_f64(ha, layout.values.word(k), v)?;
        }
        for i in 0..n {
            arena.write_f64(hb, layout.b.word(i), problem.rhs[i])?;
            arena.write_f64(hm, layout.m.word(i), problem.preconditioner[i])?;
        }
        Ok(layout)
    }

    /// Haven holding `s`.
    pub fn haven(&self, s: Structure) -> HavenHandle {
        self.havens[s as usize]
    }

    /// Plain haven holding the scratch vectors.
    pub fn scratch_haven(&self) -> HavenHandle {
        self.work
    }

    /// Counters summed over every haven of the layout.
    pub fn stats(&self, arena: &Arena) -> Result<HavenStats> {
        let mut total = HavenStats::default();
        for h in self.havens.iter().chain([&self.work]) {
            total += arena.stats(*h)?;
        }
        Ok(total)
    }

    /// Reads the current iterate through the barriers.
    pub fn read_solution(&self, arena: &mut Arena) -> Result<Vec<f64>> {
        let hx = self.haven(Structure::X);
        (0..self.n)
            .map(|i| arena.read_f64(hx, self.x.word(i)))
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Vector {
    B,
    M,
    X,
    P,
    R,
    Z,
    Q,
}

enum Halt {
    Haven(HavenError),
    InvalidIndex,
}

impl From<HavenError> for Halt {
    fn from(e: HavenError) -> Self {
        Halt::Haven(e)
    }
}

struct Kernel<'a> {
    arena: &'a mut Arena,
    layout: &'a CgLayout,
}

impl Kernel<'_> {
    fn place(&self, v: Vector) -> (HavenHandle, BlockRef) {
        let l = self.layout;
        match v {
            Vector::B => (l.haven(Structure::B), l.b),
            Vector::M => (l.haven(Structure::M), l.m),
            Vector::X => (l.haven(Structure::X), l.x),
            Vector::P => (l.haven(Structure::P), l.p),
            Vector::R => (l.haven(Structure::R), l.r),
            Vector::Z => (l.work, l.z),
            Vector::Q => (l.work, l.q),
        }
    }

    fn get(&mut self, v: Vector, i: usize) -> Result<f64> {
        let (h, block) = self.place(v);
        self.arena.read_f64(h, block.word(i))
    }

    fn set(&mut self, v: Vector, i: usize, value: f64) -> Result<()> {
        let (h, block) = self.place(v);
        self.arena.write_f64(h, block.word(i), value)
    }

    fn dot(&mut self, a: Vector, b: Vector) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..self.layout.n {
            sum += self.get(a, i)? * self.get(b, i)?;
        }
        Ok(sum)
    }

    /// `dst = A·src`.
    fn spmv(&mut self, src: Vector, dst: Vector) -> Result<(), Halt> {
        let l = self.layout;
        let ha = l.haven(Structure::A);
        let mut start = self.arena.read(ha, l.row_offsets.word(0))? as usize;
        for i in 0..l.n {
            let end = self.arena.read(ha, l.row_offsets.word(i + 1))? as usize;
            if start > end || end > l.nnz {
                return Err(Halt::InvalidIndex);
            }
            let mut acc = 0.0;
            for k in start..end {
                let col = self.arena.read(ha, l.col_indices.word(k))? as usize;
                if col >= l.n {
                    return Err(Halt::InvalidIndex);
                }
                let a = self.arena.read_f64(ha, l.values.word(k))?;
                acc += a * self.get(src, col)?;
            }
            self.set(dst, i, acc)?;
            start = end;
        }
        Ok(())
    }

    /// `z = M⁻¹·r`, returns `r·z`.
    fn precondition(&mut self) -> Result<f64> {
        let mut rz = 0.0;
        for i in 0..self.layout.n {
            let r = self.get(Vector::R, i)?;
            let z = r / self.get(Vector::M, i)?;
            self.set(Vector::Z, i, z)?;
            rz += r * z;
        }
        Ok(rz)
    }

    /// `p = z + beta·p`.
    fn update_direction(&mut self, beta: f64) -> Result<()> {
        for i in 0..self.layout.n {
            let p = self.get(Vector::Z, i)? + beta * self.get(Vector::P, i)?;
            self.set(Vector::P, i, p)?;
        }
        Ok(())
    }

    /// `x += alpha·p`, `r -= alpha·q`, returns `r·r`.
    fn step(&mut self, alpha: f64) -> Result<f64> {
        let mut rr = 0.0;
        for i in 0..self.layout.n {
            let x = self.get(Vector::X, i)? + alpha * self.get(Vector::P, i)?;
            self.set(Vector::X, i, x)?;
            let r = self.get(Vector::R, i)? - alpha * self.get(Vector::Q, i)?;
            self.set(Vector::R, i, r)?;
            rr += r * r;
        }
        Ok(rr)
    }

    /// `r = b − A·x`, returns `r·r`.
    fn true_residual(&mut self) -> Result<f64, Halt> {
        self.spmv(Vector::X, Vector::Q)?;
        let mut rr = 0.0;
        for i in 0..self.layout.n {
            let r = self.get(Vector::B, i)? - self.get(Vector::Q, i)?;
            self.set(Vector::R, i, r)?;
            rr += r * r;
        }
        Ok(rr)
    }

    /// Restarts the recurrence from `r`: `z = M⁻¹r`, `p = z`.
    fn restart(&mut self) -> Result<f64> {
        let rz = self.precondition()?;
        self.update_direction(0.0)?;
        Ok(rz)
    }

    fn scrub_all(&mut self, placement: Placement) -> Result<(), Halt> {
        for s in placement.protected() {
            let h = self.layout.haven(s);
            let report = self.arena.scrub(h)?;
            if report.unrecoverable {
                return Err(Halt::Haven(HavenError::Unrecoverable {
                    haven: h,
                    first: report.violations[0],
                    second: report.violations[1],
                }));
            }
        }
        Ok(())
    }
}

struct Progress {
    iterations: usize,
    restarts: usize,
    converged: bool,
    rr: f64,
    bb: f64,
}

fn iterate(
    kernel: &mut Kernel<'_>,
    problem: &CgProblem,
    placement: Placement,
    hook: &mut dyn TriggerHook,
    options: SolveOptions,
    progress: &mut Progress,
) -> Result<(), Halt> {
    let tol2 = problem.tol * problem.tol;
    progress.bb = kernel.dot(Vector::B, Vector::B)?;
    if progress.bb == 0.0 {
        progress.converged = true;
        return Ok(());
    }
    progress.rr = kernel.true_residual()?;
    let mut rz = kernel.restart()?;

    while progress.iterations < problem.max_iters {
        hook.tick(kernel.arena)?;
        progress.iterations += 1;
        if let Some(k) = options.scrub_interval {
            if k > 0 && progress.iterations.is_multiple_of(k) {
                kernel.scrub_all(placement)?;
            }
        }

        kernel.spmv(Vector::P, Vector::Q)?;
        let pq = kernel.dot(Vector::P, Vector::Q)?;
        let check = if pq > 0.0 && pq.is_finite() {
            progress.rr = kernel.step(rz / pq)?;
            if progress.rr.is_nan() {
                return Ok(());
            }
            progress.rr <= tol2 * progress.bb
        } else if pq.is_nan() {
            return Ok(());
        } else {
            // loss of positive curvature: fall back to the true residual
            true
        };

        if check {
            progress.rr = kernel.true_residual()?;
            if progress.rr <= tol2 * progress.bb {
                progress.converged = true;
                return Ok(());
            }
            if !progress.rr.is_finite() {
                return Ok(());
            }
            progress.restarts += 1;
            rz = kernel.restart()?;
            continue;
        }

        let rz_next = kernel.precondition()?;
        if !rz_next.is_finite() {
            return Ok(());
        }
        let beta = rz_next / rz;
        rz = rz_next;
        kernel.update_direction(beta)?;
    }
    Ok(())
}

/// Runs Jacobi-preconditioned CG on a layout previously loaded with
/// [`CgLayout::load`], from a zero initial guess.
///
/// `hook` is ticked at the start of every iteration. A converged run is
/// confirmed against a recomputed residual `b − A·x`; if the recurrence has
/// drifted the solver restarts from that residual. Unrecoverable haven
/// corruption and out-of-range matrix indices end the trial as
/// [`Classification::Aborted`]. Errors returned here are genuine misuse,
/// such as an injection outside the arena.
pub fn pcg_solve(
    arena: &mut Arena,
    layout: &CgLayout,
    problem: &CgProblem,
    placement: Placement,
    hook: &mut dyn TriggerHook,
    options: SolveOptions,
) -> Result<TrialOutcome> {
    let mut progress = Progress {
        iterations: 0,
        restarts: 0,
        converged: false,
        rr: f64::NAN,
        bb: f64::NAN,
    };
    let mut kernel = Kernel { arena, layout };
    let halted = iterate(
        &mut kernel,
        problem,
        placement,
        hook,
        options,
        &mut progress,
    );

    let mut abort = match halted {
        Ok(()) => None,
        Err(Halt::InvalidIndex) => Some(AbortReason::InvalidIndex),
        Err(Halt::Haven(e @ HavenError::Unrecoverable { .. })) => {
            Some(AbortReason::Unrecoverable(e))
        }
        // anything else, such as an injection outside the arena, is misuse
        Err(Halt::Haven(e)) => return Err(e),
    };
    let mut solution = Vec::new();
    if abort.is_none() {
        match layout.read_solution(kernel.arena) {
            Ok(x) => solution = x,
            Err(e @ HavenError::Unrecoverable { .. }) => {
                abort = Some(AbortReason::Unrecoverable(e))
            }
            Err(e) => return Err(e),
        }
    }

    let correct = abort.is_none() && validate(&solution, &problem.reference, problem.tol)?;
    let classification = match (&abort, progress.converged, correct) {
        (Some(_), _, _) => Classification::Aborted,
        (None, true, true) => Classification::Success,
        (None, true, false) => Classification::WrongAnswer,
        (None, false, _) => Classification::NoConvergence,
    };
    Ok(TrialOutcome {
        classification,
        converged: progress.converged && abort.is_none(),
        correct,
        iterations: progress.iterations,
        restarts: progress.restarts,
        stats: layout.stats(kernel.arena)?,
        faults_injected: hook.realized(),
        relative_residual: libm::sqrt(progress.rr / progress.bb),
        abort,
        solution,
    })
}

/// `‖x − x_ref‖∞ / ‖x_ref‖∞ ≤ 10·tol`. Non-finite entries never validate.
pub fn validate(x: &[f64], reference: &[f64], tol: f64) -> Result<bool> {
    if x.len() != reference.len() {
        return Err(HavenError::DimensionMismatch {
            left: x.len(),
            right: reference.len(),
        });
    }
    let err = x
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, |m: f64, d| if d.is_nan() || d > m { d } else { m });
    let scale = reference.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Ok(err / scale <= 10.0 * tol)
}
