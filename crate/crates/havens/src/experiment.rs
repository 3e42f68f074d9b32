//! The selective-protection experiment: every placement runs the same set of
//! seeded fault campaigns against the same CG problem.

use std::time::Instant;

use havens_core::cg::{
    pcg_solve, CgLayout, CgProblem, Classification, Placement, SolveOptions, TrialOutcome,
};
use havens_core::fault::{
    plan_campaign, trial_seeds, FaultCampaign, FaultSchedule, FaultTarget, NoFaults,
};
use havens_core::Arena;
use rayon::prelude::*;

use crate::config::{NamedPlacement, RunConfig, TargetSpec};
use crate::CliError;

/// Fault-free solves timed per placement; the median is reported.
const TIMING_REPS: usize = 3;

/// Campaign settings shared by every trial; the seed varies per trial.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPlan {
    pub min_faults: usize,
    pub min_bits: u32,
    pub max_bits: u32,
    pub pattern: havens_core::fault::BitPattern,
    pub target: TargetSpec,
    /// `None`: the fault-free iteration count of the problem.
    pub trigger_points: Option<usize>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub problem: CgProblem,
    pub page_size: usize,
    /// `None`: exactly the pages the layout needs.
    pub total_pages: Option<usize>,
    pub campaign: CampaignPlan,
    pub placements: Vec<NamedPlacement>,
    pub trials: usize,
    pub master_seed: u64,
    pub options: SolveOptions,
    /// Worker threads; `None` lets rayon decide.
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_config(config: &RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let c = &config.campaign;
        Ok(Self {
            problem: config.build_problem()?,
            page_size: config.arena.page_size,
            total_pages: config.arena.total_pages,
            campaign: CampaignPlan {
                min_faults: c.min_faults,
                min_bits: c.min_bits,
                max_bits: c.max_bits,
                pattern: c.pattern.into(),
                target: config.target()?,
                trigger_points: c.trigger_points,
                stride: c.stride,
            },
            placements: config.named_placements()?,
            trials: config.trials,
            master_seed: config.master_seed,
            options: config.solve_options(),
            threads: None,
        })
    }

    /// Pages each trial's arena gets.
    pub fn arena_pages(&self) -> Result<usize, CliError> {
        let needed = CgLayout::required_pages(&self.problem, self.page_size);
        match self.total_pages {
            None => Ok(needed),
            Some(pages) if pages >= needed => Ok(pages),
            Some(pages) => Err(CliError::Resource(format!(
                "arena of {pages} pages cannot hold the CG layout ({needed} pages of {} bytes needed)",
                self.page_size
            ))),
        }
    }
}

/// One row of the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub placement_id: String,
    pub trial: usize,
    pub seed: u64,
    /// The solve outcome, with the solution vector dropped.
    pub outcome: TrialOutcome,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSummary {
    pub name: String,
    pub placement: Placement,
    pub trials: usize,
    /// Trials per class, indexed by `Classification as usize`.
    pub counts: [usize; 4],
    pub mean_iterations: f64,
    pub mean_wall_time_s: f64,
    pub detections: u64,
    pub recoveries: u64,
    pub unrecoverables: u64,
    /// Trials in which fewer faults fired than were planned.
    pub shortfall_trials: usize,
    /// Median fault-free solve time with this placement.
    pub fault_free_time_s: f64,
    /// `fault_free_time_s` relative to the unprotected fault-free solve, minus one.
    pub overhead: f64,
}

impl PlacementSummary {
    pub fn successes(&self) -> usize {
        self.counts[Classification::Success as usize]
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by placement, then trial.
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<PlacementSummary>,
    pub baseline_iterations: usize,
    pub baseline_time_s: f64,
    pub trigger_points: usize,
}

fn resolve_target(target: TargetSpec, layout: &CgLayout) -> FaultTarget {
    match target {
        TargetSpec::Active => FaultTarget::ActiveData,
        TargetSpec::WholeArena => FaultTarget::WholeArena,
        TargetSpec::NonHaven => FaultTarget::NonHaven,
        TargetSpec::Scratch => FaultTarget::HavenOnly(layout.scratch_haven()),
        TargetSpec::Structure(s) => FaultTarget::HavenOnly(layout.haven(s)),
    }
}

/// Solves once without faults and returns the outcome and wall time.
pub fn fault_free_solve(
    spec: &ExperimentSpec,
    placement: Placement,
) -> Result<(TrialOutcome, f64), CliError> {
    let mut arena = Arena::new(spec.page_size, spec.arena_pages()?)?;
    let layout = CgLayout::load(&mut arena, &spec.problem, placement)?;
    let start = Instant::now();
    let outcome = pcg_solve(
        &mut arena,
        &layout,
        &spec.problem,
        placement,
        &mut NoFaults,
        spec.options,
    )?;
    Ok((outcome, start.elapsed().as_secs_f64()))
}

fn median_time(spec: &ExperimentSpec, placement: Placement) -> Result<f64, CliError> {
    let mut times = (0..TIMING_REPS)
        .map(|_| fault_free_solve(spec, placement).map(|(_, t)| t))
        .collect::<Result<Vec<_>, _>>()?;
    times.sort_by(f64::total_cmp);
    Ok(times[TIMING_REPS / 2])
}

/// Runs one seeded trial.
pub fn run_trial(
    spec: &ExperimentSpec,
    placement: &NamedPlacement,
    trial: usize,
    seed: u64,
    trigger_points: usize,
) -> Result<TrialRecord, CliError> {
    let mut arena = Arena::new(spec.page_size, spec.arena_pages()?)?;
    let layout = CgLayout::load(&mut arena, &spec.problem, placement.placement)?;
    let c = &spec.campaign;
    let campaign = FaultCampaign {
        seed,
        min_faults: c.min_faults,
        min_bits: c.min_bits,
        max_bits: c.max_bits,
        pattern: c.pattern,
        target: resolve_target(c.target, &layout),
        trigger_points,
    };
    let events = plan_campaign(&campaign, &arena.map())?;
    let mut schedule = FaultSchedule::new(events).with_stride(c.stride);

    let start = Instant::now();
    let mut outcome = pcg_solve(
        &mut arena,
        &layout,
        &spec.problem,
        placement.placement,
        &mut schedule,
        spec.options,
    )?;
    let wall_time_s = start.elapsed().as_secs_f64();
    outcome.solution = Vec::new();
    Ok(TrialRecord {
        placement_id: placement.name.clone(),
        trial,
        seed,
        outcome,
        wall_time_s,
    })
}

fn summarize(
    name: &str,
    placement: Placement,
    records: &[TrialRecord],
    min_faults: usize,
) -> PlacementSummary {
    let mut counts = [0; 4];
    let mut iterations = 0usize;
    let mut wall = 0.0;
    let (mut detections, mut recoveries, mut unrecoverables) = (0, 0, 0);
    let mut shortfall_trials = 0;
    for r in records {
        counts[r.outcome.classification as usize] += 1;
        iterations += r.outcome.iterations;
        wall += r.wall_time_s;
        detections += r.outcome.stats.detections;
        recoveries += r.outcome.stats.recoveries;
        unrecoverables += r.outcome.stats.unrecoverables;
        if r.outcome.faults_injected < min_faults {
            shortfall_trials += 1;
        }
    }
    let n = records.len().max(1) as f64;
    PlacementSummary {
        name: name.to_string(),
        placement,
        trials: records.len(),
        counts,
        mean_iterations: iterations as f64 / n,
        mean_wall_time_s: wall / n,
        detections,
        recoveries,
        unrecoverables,
        shortfall_trials,
        fault_free_time_s: 0.0,
        overhead: 0.0,
    }
}

/// Runs every placement for `trials` seeded trials. Trial `k` uses the same
/// seed, and therefore the same fault sites, under every placement.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, CliError> {
    if spec.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    let (baseline, _) = fault_free_solve(spec, Placement::NONE)?;
    let trigger_points = spec
        .campaign
        .trigger_points
        .unwrap_or(baseline.iterations)
        .max(spec.campaign.min_faults);

    let seeds = trial_seeds(spec.master_seed, spec.trials);
    let jobs: Vec<(usize, usize)> = (0..spec.placements.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let run = || {
        jobs.par_iter()
            .map(|&(p, t)| run_trial(spec, &spec.placements[p], t, seeds[t], trigger_points))
            .collect::<Result<Vec<_>, _>>()
    };
    let records = match spec.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| CliError::Resource(format!("cannot start worker threads: {e}")))?
            .install(run)?,
        None => run()?,
    };

    // timed sequentially, outside the trial pool
    let baseline_time_s = median_time(spec, Placement::NONE)?;
    let summaries = spec
        .placements
        .iter()
        .enumerate()
        .map(|(p, named)| {
            let rows = &records[p * spec.trials..(p + 1) * spec.trials];
            let mut summary =
                summarize(&named.name, named.placement, rows, spec.campaign.min_faults);
            summary.fault_free_time_s = median_time(spec, named.placement)?;
            summary.overhead = summary.fault_free_time_s / baseline_time_s - 1.0;
            Ok(summary)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    Ok(ExperimentResult {
        records,
        summaries,
        baseline_iterations: baseline.iterations,
        baseline_time_s,
        trigger_points,
    })
}
