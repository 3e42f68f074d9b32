//! Ranked placement tables from result rows.

use std::fmt::Write as _;
use std::path::Path;

use havens_core::cg::Classification;

use crate::results::{read_rows, ResultRow};
use crate::stats::{newcombe_difference, wilson, Z95};
use crate::CliError;

/// Placement treated as the cost baseline.
pub const BASELINE: &str = "none";

/// Per-placement aggregate over trial rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementTally {
    pub name: String,
    pub trials: usize,
    pub counts: [usize; 4],
    pub mean_iterations: f64,
    /// Mean wall time per iteration; `None` unless every trial was timed.
    pub time_per_iteration: Option<f64>,
    pub detections: u64,
    pub recoveries: u64,
    pub unrecoverables: u64,
}

impl PlacementTally {
    pub fn successes(&self) -> usize {
        self.counts[Classification::Success as usize]
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.trials as f64
    }
}

/// Tallies trial rows per placement in first-appearance order. Summary rows
/// are ignored.
pub fn tally(rows: &[ResultRow]) -> Vec<PlacementTally> {
    struct Acc {
        tally: PlacementTally,
        iterations: usize,
        time: Option<f64>,
    }
    let mut accs: Vec<Acc> = Vec::new();
    for row in rows {
        let ResultRow::Trial(t) = row else { continue };
        let idx = match accs.iter().position(|a| a.tally.name == t.placement_id) {
            Some(i) => i,
            None => {
                accs.push(Acc {
                    tally: PlacementTally {
                        name: t.placement_id.clone(),
                        trials: 0,
                        counts: [0; 4],
                        mean_iterations: 0.0,
                        time_per_iteration: None,
                        detections: 0,
                        recoveries: 0,
                        unrecoverables: 0,
                    },
                    iterations: 0,
                    time: Some(0.0),
                });
                accs.len() - 1
            }
        };
        let a = &mut accs[idx];
        a.tally.trials += 1;
        a.tally.counts[t.classification as usize] += 1;
        a.tally.detections += t.detections;
        a.tally.recoveries += t.recoveries;
        a.tally.unrecoverables += t.unrecoverables;
        a.iterations += t.iterations;
        a.time = match (a.time, t.wall_time_s) {
            (Some(sum), Some(w)) => Some(sum + w),
            _ => None,
        };
    }
    accs.into_iter()
        .map(|a| {
            let mut tally = a.tally;
            tally.mean_iterations = a.iterations as f64 / tally.trials as f64;
            tally.time_per_iteration = a
                .time
                .filter(|_| a.iterations > 0)
                .map(|t| t / a.iterations as f64);
            tally
        })
        .collect()
}

/// Tallies sorted by success rate, best first; ties keep input order.
pub fn ranked(mut tallies: Vec<PlacementTally>) -> Vec<PlacementTally> {
    tallies.sort_by(|a, b| b.success_rate().total_cmp(&a.success_rate()));
    tallies
}

fn overhead(t: &PlacementTally, baseline: Option<&PlacementTally>) -> Option<f64> {
    let base = baseline?.time_per_iteration?;
    Some(t.time_per_iteration? / base - 1.0)
}

/// Renders the ranked table and the trade-off summary.
pub fn render(rows: &[ResultRow]) -> String {
    let tallies = ranked(tally(rows));
    if tallies.is_empty() {
        return "no trials\n".to_string();
    }
    let baseline = tallies.iter().find(|t| t.name == BASELINE);
    let width = tallies
        .iter()
        .map(|t| t.name.len())
        .max()
        .unwrap_or(0)
        .max("placement".len());

    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>6}  {:>8}  {:>15}  {:>5}  {:>5}  {:>5}  {:>5}  {:>9}  {:>9}",
        "placement",
        "trials",
        "success",
        "95% CI",
        "ok",
        "wrong",
        "nconv",
        "abort",
        "mean iter",
        "overhead"
    );
    for t in &tallies {
        let (lo, hi) = wilson(t.successes(), t.trials, Z95);
        let cost = match overhead(t, baseline) {
            Some(o) => format!("{:+.1}%", o * 100.0),
            None => "-".into(),
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>7.1}%  {:>15}  {:>5}  {:>5}  {:>5}  {:>5}  {:>9.2}  {:>9}",
            t.name,
            t.trials,
            t.success_rate() * 100.0,
            format!("[{:.1}, {:.1}]", lo * 100.0, hi * 100.0),
            t.counts[0],
            t.counts[1],
            t.counts[2],
            t.counts[3],
            t.mean_iterations,
            cost,
        );
    }

    let best = &tallies[0];
    let tied: Vec<&PlacementTally> = tallies
        .iter()
        .filter(|t| {
            newcombe_difference(best.successes(), best.trials, t.successes(), t.trials, Z95).0
                <= 0.0
        })
        .collect();
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "highest success rate: {} ({:.1}%)",
        best.name,
        best.success_rate() * 100.0
    );
    let _ = writeln!(
        out,
        "not significantly worse (95%): {}",
        tied.iter()
            .map(|t| t.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let cheapest = tied
        .iter()
        .filter_map(|t| overhead(t, baseline).map(|o| (o, *t)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match cheapest {
        Some((o, t)) => {
            let _ = writeln!(
                out,
                "cheapest of those: {} ({:+.1}% time per iteration vs {BASELINE})",
                t.name,
                o * 100.0
            );
        }
        None => {
            let _ = writeln!(
                out,
                "overhead: not available (run with timing and a \"{BASELINE}\" placement)"
            );
        }
    }
    out
}

/// Reads a result CSV and renders it.
pub fn report_file(path: &Path) -> Result<String, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(render(&read_rows(std::io::BufReader::new(file))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::TrialRow;

    fn rows(spec: &[(&str, usize, usize)], timed: bool) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for &(name, ok, total) in spec {
            for trial in 0..total {
                let c = if trial < ok {
                    Classification::Success
                } else {
                    Classification::WrongAnswer
                };
                out.push(ResultRow::Trial(TrialRow {
                    placement_id: name.into(),
                    trial,
                    seed: trial as u64,
                    classification: c,
                    iterations: 10,
                    detections: 0,
                    recoveries: 0,
                    unrecoverables: 0,
                    wall_time_s: timed.then_some(if name == "none" { 1.0 } else { 1.5 }),
                }));
            }
        }
        out
    }

    #[test]
    fn table_is_sorted_by_success_rate() {
        let text = render(&rows(
            &[("none", 2, 20), ("all", 19, 20), ("ab", 10, 20)],
            false,
        ));
        let order: Vec<&str> = text
            .lines()
            .skip(1)
            .take(3)
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(order, ["all", "ab", "none"]);
        assert!(text.contains("highest success rate: all (95.0%)"));
        assert!(text.contains("overhead: not available"));
    }

    #[test]
    fn overhead_is_per_iteration_against_none() {
        let text = render(&rows(&[("none", 2, 20), ("all", 19, 20)], true));
        assert!(text.contains("+50.0%"), "{text}");
        assert!(text.contains("cheapest of those: all"));
    }

    #[test]
    fn no_trial_rows_means_no_trials() {
        assert_eq!(render(&[]), "no trials\n");
    }

    #[test]
    fn close_rates_are_tied() {
        let text = render(&rows(&[("a", 18, 20), ("b", 17, 20), ("c", 1, 20)], false));
        assert!(
            text.contains("not significantly worse (95%): a, b\n"),
            "{text}"
        );
    }
}
