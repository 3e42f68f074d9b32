use havens_core::cg::{
    build_poisson, pcg_solve, CgLayout, CgProblem, Classification, Placement, SolveOptions,
    Structure,
};
use havens_core::fault::{
    plan_campaign, BitPattern, FaultCampaign, FaultSchedule, FaultTarget, NoFaults,
};
use havens_core::Arena;
use proptest::prelude::*;

const PAGE: usize = 4096;

fn fresh(problem: &CgProblem, placement: Placement) -> (Arena, CgLayout) {
    let mut arena = Arena::new(PAGE, CgLayout::required_pages(problem, PAGE)).unwrap();
    let layout = CgLayout::load(&mut arena, problem, placement).unwrap();
    (arena, layout)
}

/// Textbook Jacobi PCG on plain vectors.
fn plain_pcg(problem: &CgProblem) -> (Vec<f64>, usize) {
    let a = &problem.matrix;
    let n = problem.n();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = problem.rhs.clone();
    let mut z: Vec<f64> = r
        .iter()
        .zip(&problem.preconditioner)
        .map(|(r, d)| r / d)
        .collect();
    let mut p = z.clone();
    let bb = dot(&problem.rhs, &problem.rhs);
    let mut rz = dot(&r, &z);
    for it in 0..problem.max_iters {
        if (dot(&r, &r) / bb).sqrt() <= problem.tol {
            return (x, it);
        }
        let q = a.mul_vec(&p).unwrap();
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        z = r
            .iter()
            .zip(&problem.preconditioner)
            .map(|(r, d)| r / d)
            .collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, problem.max_iters)
}

#[test]
fn matches_a_plain_implementation() {
    let problem = build_poisson(12).unwrap();
    let (expected, iterations) = plain_pcg(&problem);
    for placement in [Placement::NONE, Placement::ALL] {
        let (mut arena, layout) = fresh(&problem, placement);
        let out = pcg_solve(
            &mut arena,
            &layout,
            &problem,
            placement,
            &mut NoFaults,
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(out.classification, Classification::Success);
        assert!(
            out.iterations.abs_diff(iterations) <= 1,
            "{} vs {iterations}",
            out.iterations
        );
        let err = out
            .solution
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn fault_free_runs_are_identical_across_placements() {
    let problem = build_poisson(16).unwrap();
    let runs: Vec<_> = [
        Placement::NONE,
        Placement::operands(),
        Placement::dynamic_state(),
        Placement::ALL,
    ]
    .into_iter()
    .map(|placement| {
        let (mut arena, layout) = fresh(&problem, placement);
        pcg_solve(
            &mut arena,
            &layout,
            &problem,
            placement,
            &mut NoFaults,
            SolveOptions::default(),
        )
        .unwrap()
    })
    .collect();
    for r in &runs[1..] {
        assert_eq!(r.iterations, runs[0].iterations);
        assert_eq!(
            r.relative_residual.to_bits(),
            runs[0].relative_residual.to_bits()
        );
        assert_eq!(r.solution, runs[0].solution);
    }
}

#[test]
fn matrix_dominates_active_data() {
    for n_grid in [16, 24, 48] {
        let problem = build_poisson(n_grid).unwrap();
        let share = problem.structure_bytes(Structure::A) as f64 / problem.active_bytes() as f64;
        assert!(share > 0.5, "n_grid {n_grid}: {share}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Single-bit faults land in protected structures at distinct iterations,
    /// so each is caught by the next read before another can join it.
    #[test]
    fn single_bit_faults_in_a_protected_structure_are_harmless(
        seed in any::<u64>(),
        structure in prop::sample::select(vec![Structure::A, Structure::X, Structure::P, Structure::R]),
        scrub in prop::option::of(1usize..4),
    ) {
        let problem = build_poisson(10).unwrap();
        let (mut arena, layout) = fresh(&problem, Placement::ALL);
        let campaign = FaultCampaign {
            seed,
            min_faults: 4,
            min_bits: 1,
            max_bits: 1,
            pattern: BitPattern::Random,
            target: FaultTarget::HavenOnly(layout.haven(structure)),
            trigger_points: 12,
        };
        let events = plan_campaign(&campaign, &arena.map()).unwrap();
        let mut schedule = FaultSchedule::new(events);
        let options = SolveOptions { scrub_interval: scrub };
        let out = pcg_solve(&mut arena, &layout, &problem, Placement::ALL, &mut schedule, options).unwrap();
        prop_assert_eq!(out.classification, Classification::Success);
        prop_assert_eq!(out.faults_injected, 4);
        prop_assert_eq!(out.stats.detections, 4);
        prop_assert_eq!(out.stats.recoveries, 4);
    }
}
