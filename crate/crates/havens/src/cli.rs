//! The `havens` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use havens_core::cg::{CgLayout, Structure};
use havens_core::fault::{inject, plan_campaign, trial_seeds, FaultCampaign, FaultEvent};
use havens_core::{parity_bit, Arena, ArenaMap, HavenHandle, WORD_BYTES};

use crate::config::{NamedPlacement, RunConfig, TargetSpec};
use crate::experiment::{run_experiment, ExperimentResult, ExperimentSpec};
use crate::results::{rows_from, write_rows};
use crate::{report, scrub_demo, CliError, EXIT_MISMATCH, EXIT_OK};

/// Caps the number of worker threads used for trials.
pub const THREADS_ENV: &str = "HAVEN_THREADS";

const DEFAULT_OUTPUT: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(
    name = "havens",
    version,
    about = "Parity-protected memory havens: demos, fault campaigns and the CG experiment"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `trials`.
    #[arg(long, global = true, value_name = "N")]
    pub trials: Option<usize>,
    /// Overrides `output`.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Records wall times in the result CSV.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt a single haven with the scripted faults and scrub it.
    ScrubDemo,
    /// Inject seeded campaigns into the CG layout and scrub every haven.
    Campaign,
    /// Run the placement experiment and write the result CSV.
    Cg,
    /// Print the ranked placement table for a result CSV.
    Report {
        /// Result CSV; defaults to `--out` or the configured output.
        csv: Option<PathBuf>,
    },
}

impl Cli {
    /// The configuration with command-line overrides applied.
    pub fn load_config(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.master_seed = seed;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        config.timing |= self.timing;
        config.validate()?;
        Ok(config)
    }
}

/// Reads the thread cap from the environment.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Parses the process arguments, runs and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("havens: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line, writing human output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match &cli.command {
        Command::ScrubDemo => cmd_scrub_demo(&cli.load_config()?, out),
        Command::Campaign => cmd_campaign(&cli.load_config()?, out),
        Command::Cg => cmd_cg(&cli.load_config()?, out),
        Command::Report { csv } => {
            let path = match (csv, &cli.out) {
                (Some(p), _) | (None, Some(p)) => p.clone(),
                (None, None) => cli
                    .load_config()?
                    .output
                    .unwrap_or_else(|| DEFAULT_OUTPUT.into()),
            };
            cmd_report(&path, out)
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("stdout", e))
}

pub fn cmd_scrub_demo(config: &RunConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    let run = scrub_demo::run_demo(&config.scrub_demo, config.arena.page_size)?;
    let mut text = run.trace.join("\n");
    let expected = config.scrub_demo.expect;
    text.push_str(&format!(
        "\nobserved {:?}, expected {:?}\n",
        run.observed, expected
    ));
    emit(out, &text)?;
    if run.observed == expected {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "havens: demo behaved as {:?}, expected {:?}",
            run.observed, expected
        );
        Ok(EXIT_MISMATCH)
    }
}

/// Names the haven (or arena region) a byte offset falls in, with the word
/// index inside the haven.
fn locate(map: &ArenaMap, names: &[(HavenHandle, &'static str)], byte_offset: usize) -> String {
    let page = byte_offset / map.page_size;
    for h in &map.havens {
        if let Some(k) = h.pages.iter().position(|&p| p == page) {
            let local = k * map.page_size + byte_offset % map.page_size;
            let name = names
                .iter()
                .find(|(hh, _)| *hh == h.haven)
                .map_or("?", |(_, n)| n);
            return if local < h.extent {
                format!("{name}[{}]", local / WORD_BYTES)
            } else {
                format!("{name} slack")
            };
        }
    }
    "free page".into()
}

pub fn cmd_campaign(config: &RunConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    let spec = ExperimentSpec::from_config(config)?;
    let named: &NamedPlacement = &spec.placements[0];
    let pages = spec.arena_pages()?;
    let c = &spec.campaign;
    let trigger_points = c.trigger_points.unwrap_or(c.min_faults).max(c.min_faults);
    let mut text = format!(
        "campaign: {} trials, placement {} ({}), {} faults of {}..{} bits, target {}\n",
        spec.trials,
        named.name,
        named.placement,
        c.min_faults,
        c.min_bits,
        c.max_bits,
        config.campaign.target
    );

    let (mut faults, mut odd, mut detected, mut recovered, mut unrecoverable, mut silent) =
        (0, 0, 0, 0, 0, 0);
    for (trial, seed) in trial_seeds(spec.master_seed, spec.trials)
        .into_iter()
        .enumerate()
    {
        let mut arena = Arena::new(spec.page_size, pages)?;
        let layout = CgLayout::load(&mut arena, &spec.problem, named.placement)?;
        let mut names: Vec<(HavenHandle, &'static str)> = Structure::ALL
            .iter()
            .map(|&s| (layout.haven(s), s.name()))
            .collect();
        names.push((layout.scratch_haven(), "scratch"));
        let map = arena.map();
        let target = match c.target {
            TargetSpec::Active => havens_core::fault::FaultTarget::ActiveData,
            TargetSpec::WholeArena => havens_core::fault::FaultTarget::WholeArena,
            TargetSpec::NonHaven => havens_core::fault::FaultTarget::NonHaven,
            TargetSpec::Scratch => {
                havens_core::fault::FaultTarget::HavenOnly(layout.scratch_haven())
            }
            TargetSpec::Structure(s) => havens_core::fault::FaultTarget::HavenOnly(layout.haven(s)),
        };
        let events: Vec<FaultEvent> = plan_campaign(
            &FaultCampaign {
                seed,
                min_faults: c.min_faults,
                min_bits: c.min_bits,
                max_bits: c.max_bits,
                pattern: c.pattern,
                target,
                trigger_points,
            },
            &map,
        )?;
        let before: Vec<u64> = (0..arena.backing_bytes() / WORD_BYTES)
            .map(|w| arena.peek(w * WORD_BYTES).unwrap_or(0))
            .collect();

        text.push_str(&format!("trial {trial} seed {seed}\n"));
        for e in &events {
            inject(&mut arena, e)?;
            faults += 1;
            odd += usize::from(parity_bit(e.bit_mask));
            text.push_str(&format!(
                "  flip {:#018x} ({}-bit) at {}\n",
                e.bit_mask,
                e.bit_mask.count_ones(),
                locate(&map, &names, e.byte_offset)
            ));
        }
        let mut failed_havens = Vec::new();
        for &(h, name) in &names {
            let report = arena.scrub(h)?;
            detected += report.violations.len();
            recovered += report.recovered.len();
            if report.unrecoverable {
                unrecoverable += 1;
                failed_havens.push(h);
                text.push_str(&format!(
                    "  scrub {name}: unrecoverable, words {:?}\n",
                    report.violations
                ));
            } else if let Some((w, _)) = report.recovered.first() {
                text.push_str(&format!("  scrub {name}: recovered word {w}\n"));
            }
        }
        let after_map = arena.map();
        for (w, &old) in before.iter().enumerate() {
            let byte = w * WORD_BYTES;
            if arena.peek(byte) != Some(old) {
                let page = byte / after_map.page_size;
                let held = after_map
                    .havens
                    .iter()
                    .any(|h| failed_havens.contains(&h.haven) && h.pages.contains(&page));
                if !held {
                    silent += 1;
                    text.push_str(&format!(
                        "  still corrupt after scrub: {}\n",
                        locate(&map, &names, byte)
                    ));
                }
            }
        }
    }
    text.push_str(&format!(
        "summary: {faults} faults ({odd} odd-weight), {detected} parity violations, {recovered} words recovered, \
         {unrecoverable} unrecoverable scrubs, {silent} words silently corrupt\n"
    ));
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn summary_table(result: &ExperimentResult) -> String {
    let width = result
        .summaries
        .iter()
        .map(|s| s.name.len())
        .max()
        .unwrap_or(0)
        .max("placement".len());
    let mut text = format!(
        "fault-free solve: {} iterations; faults spread over {} trigger points\n{:<width$}  {:<12}  {:>8}  {:>9}  {:>9}\n",
        result.baseline_iterations, result.trigger_points, "placement", "protects", "success", "mean iter", "overhead"
    );
    for s in &result.summaries {
        text.push_str(&format!(
            "{:<width$}  {:<12}  {:>7.1}%  {:>9.2}  {:>+8.1}%\n",
            s.name,
            s.placement.to_string(),
            s.success_rate() * 100.0,
            s.mean_iterations,
            s.overhead * 100.0
        ));
    }
    text
}

pub fn cmd_cg(config: &RunConfig, out: &mut dyn Write) -> Result<i32, CliError> {
    let mut spec = ExperimentSpec::from_config(config)?;
    spec.threads = thread_cap()?;
    let result = run_experiment(&spec)?;
    let path = config
        .output
        .clone()
        .unwrap_or_else(|| DEFAULT_OUTPUT.into());
    let rows = rows_from(&result, config.master_seed, config.timing);
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_rows(std::io::BufWriter::new(file), &rows)?;
    let mut text = summary_table(&result);
    text.push_str(&format!(
        "wrote {} rows to {}\n",
        rows.len(),
        path.display()
    ));
    emit(out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    emit(out, &report::report_file(path)?)?;
    Ok(EXIT_OK)
}
