//! Run configuration, read from a TOML file.
//!
//! Every section is optional; omitted keys take the defaults below. The file
//! must carry `config_version = 1`.
//!
//! ```toml
//! config_version = 1
//! master_seed = 42
//! trials = 200
//! output = "results.csv"
//! timing = false
//!
//! [arena]
//! page_size = 4096
//! # total_pages = 64      # default: exactly what the CG layout needs
//!
//! [problem]
//! n_grid = 32
//! tol = 1e-8
//! max_iters = 1000
//!
//! [campaign]
//! min_faults = 5
//! min_bits = 1
//! max_bits = 4
//! pattern = "random"      # or "contiguous"
//! target = "active"       # "whole-arena", "non-haven", "scratch" or A/b/M/x/p/r
//! # trigger_points = 60   # default: fault-free iteration count
//! stride = 1
//!
//! [solver]
//! scrub_interval = 0      # 0 = read barriers only
//!
//! [[placements]]
//! name = "all"
//! protect = ["A", "b", "M", "x", "p", "r"]
//! ```

use std::path::{Path, PathBuf};

use havens_core::cg::{build_poisson, CgProblem, Placement, SolveOptions, Structure};
use havens_core::fault::BitPattern;
use serde::Deserialize;

use crate::CliError;

/// Only accepted `config_version`.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Record per-trial wall time in the CSV. Off by default so that the CSV
    /// is a pure function of config and seed.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub arena: ArenaSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default = "default_placements")]
    pub placements: Vec<PlacementSpec>,
    #[serde(default)]
    pub scrub_demo: DemoSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArenaSection {
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default)]
    pub total_pages: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    #[serde(default = "default_min_faults")]
    pub min_faults: usize,
    #[serde(default = "default_min_bits")]
    pub min_bits: u32,
    #[serde(default = "default_max_bits")]
    pub max_bits: u32,
    #[serde(default)]
    pub pattern: PatternName,
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default)]
    pub trigger_points: Option<usize>,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    #[default]
    Random,
    Contiguous,
}

impl From<PatternName> for BitPattern {
    fn from(p: PatternName) -> Self {
        match p {
            PatternName::Random => BitPattern::Random,
            PatternName::Contiguous => BitPattern::Contiguous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub scrub_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub name: String,
    #[serde(default)]
    pub protect: Vec<String>,
}

/// A word-level fault scripted for `scrub-demo`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFault {
    pub word: usize,
    pub mask: Mask,
}

/// Bit mask given as an integer or a `0x`-prefixed hex string.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Mask {
    Int(u64),
    Text(String),
}

impl Mask {
    pub fn value(&self) -> Result<u64, CliError> {
        let v = match self {
            Mask::Int(v) => *v,
            Mask::Text(s) => {
                let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"));
                match digits {
                    Some(hex) => u64::from_str_radix(hex, 16),
                    None => s.parse(),
                }
                .map_err(|_| CliError::Config(format!("bad mask {s:?}")))?
            }
        };
        if v == 0 {
            return Err(CliError::Config("fault mask must be non-zero".into()));
        }
        Ok(v)
    }
}

/// What the demo trace is expected to show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// No violation at all.
    Clean,
    /// Every faulted word was caught and repaired.
    Recovered,
    /// Corruption was detected but could not be repaired.
    Unrecoverable,
    /// Corruption happened but parity did not see it.
    Undetected,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSection {
    #[serde(default = "default_demo_words")]
    pub words: usize,
    #[serde(default = "default_demo_faults")]
    pub faults: Vec<ScriptedFault>,
    #[serde(default = "default_expect")]
    pub expect: Expectation,
}

fn default_trials() -> usize {
    100
}
fn default_page_size() -> usize {
    4096
}
fn default_n_grid() -> usize {
    32
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    1000
}
fn default_min_faults() -> usize {
    5
}
fn default_min_bits() -> u32 {
    1
}
fn default_max_bits() -> u32 {
    4
}
fn default_target() -> String {
    "active".into()
}
fn default_stride() -> usize {
    1
}
fn default_demo_words() -> usize {
    64
}
fn default_demo_faults() -> Vec<ScriptedFault> {
    vec![ScriptedFault {
        word: 3,
        mask: Mask::Int(1),
    }]
}
fn default_expect() -> Expectation {
    Expectation::Recovered
}

/// The five placements of the selective-protection experiment: everything,
/// static state, operands only, dynamic state, nothing.
pub fn default_placements() -> Vec<PlacementSpec> {
    let spec = |name: &str, protect: &[&str]| PlacementSpec {
        name: name.into(),
        protect: protect.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        spec("all", &["A", "b", "M", "x", "p", "r"]),
        spec("static", &["A", "b", "M"]),
        spec("operands", &["A", "b"]),
        spec("dynamic", &["x", "p", "r"]),
        spec("none", &[]),
    ]
}

impl Default for ArenaSection {
    fn default() -> Self {
        Self {
            page_size: default_page_size(),
            total_pages: None,
        }
    }
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            tol: default_tol(),
            max_iters: default_max_iters(),
        }
    }
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            min_faults: default_min_faults(),
            min_bits: default_min_bits(),
            max_bits: default_max_bits(),
            pattern: PatternName::Random,
            target: default_target(),
            trigger_points: None,
            stride: default_stride(),
        }
    }
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            words: default_demo_words(),
            faults: default_demo_faults(),
            expect: default_expect(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            master_seed: 0,
            trials: default_trials(),
            output: None,
            timing: false,
            arena: ArenaSection::default(),
            problem: ProblemSection::default(),
            campaign: CampaignSection::default(),
            solver: SolverSection::default(),
            placements: default_placements(),
            scrub_demo: DemoSection::default(),
        }
    }
}

/// Where a campaign aims, before haven handles exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSpec {
    Active,
    WholeArena,
    NonHaven,
    Scratch,
    Structure(Structure),
}

impl std::str::FromStr for TargetSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(match s {
            "active" => TargetSpec::Active,
            "whole-arena" => TargetSpec::WholeArena,
            "non-haven" => TargetSpec::NonHaven,
            "scratch" => TargetSpec::Scratch,
            other => TargetSpec::Structure(other.parse().map_err(|_| {
                CliError::Config(format!(
                    "unknown campaign target {other:?}; expected active, whole-arena, non-haven, scratch or A/b/M/x/p/r"
                ))
            })?),
        })
    }
}

/// A placement with its configured name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedPlacement {
    pub name: String,
    pub placement: Placement,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("cannot parse config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.config_version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config_version {} (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.problem.n_grid < 2 {
            return bad("problem.n_grid must be at least 2");
        }
        if !(self.problem.tol > 0.0 && self.problem.tol < 1.0) {
            return bad("problem.tol must lie in (0, 1)");
        }
        if self.problem.max_iters == 0 {
            return bad("problem.max_iters must be at least 1");
        }
        let c = &self.campaign;
        if c.min_bits == 0 || c.min_bits > c.max_bits || c.max_bits > 64 {
            return bad("campaign bits must satisfy 1 <= min_bits <= max_bits <= 64");
        }
        if c.stride == 0 {
            return bad("campaign.stride must be at least 1");
        }
        if c.trigger_points.is_some_and(|t| t < c.min_faults) {
            return bad("campaign.trigger_points must be at least min_faults");
        }
        self.target()?;
        self.named_placements()?;
        if self.scrub_demo.words == 0 {
            return bad("scrub_demo.words must be at least 1");
        }
        for f in &self.scrub_demo.faults {
            f.mask.value()?;
            if f.word >= self.scrub_demo.words {
                return bad("scrub_demo fault word outside the demo haven");
            }
        }
        Ok(())
    }

    pub fn target(&self) -> Result<TargetSpec, CliError> {
        self.campaign.target.parse()
    }

    pub fn named_placements(&self) -> Result<Vec<NamedPlacement>, CliError> {
        if self.placements.is_empty() {
            return Err(CliError::Config(
                "at least one placement is required".into(),
            ));
        }
        let mut out: Vec<NamedPlacement> = Vec::new();
        for spec in &self.placements {
            if spec.name.is_empty() || spec.name == "summary" {
                return Err(CliError::Config(format!(
                    "invalid placement name {:?}",
                    spec.name
                )));
            }
            if out.iter().any(|p| p.name == spec.name) {
                return Err(CliError::Config(format!(
                    "duplicate placement {:?}",
                    spec.name
                )));
            }
            let structures = spec
                .protect
                .iter()
                .map(|s| {
                    s.parse::<Structure>().map_err(|_| {
                        CliError::Config(format!(
                            "placement {:?} names {s:?}; only A, b, M, x, p, r exist",
                            spec.name
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            out.push(NamedPlacement {
                name: spec.name.clone(),
                placement: Placement::of(&structures),
            });
        }
        Ok(out)
    }

    pub fn build_problem(&self) -> Result<CgProblem, CliError> {
        Ok(build_poisson(self.problem.n_grid)?
            .with_tolerance(self.problem.tol)
            .with_max_iters(self.problem.max_iters))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            scrub_interval: (self.solver.scrub_interval > 0).then_some(self.solver.scrub_interval),
        }
    }
}
