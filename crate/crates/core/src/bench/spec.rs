use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::FxpFormat;
use crate::mpcgen::{generate_problem, GeneratorSpec};
use crate::neurosolver::{NetworkConfig, DEFAULT_C_SYNC};
use crate::problem::{load_problem, QpProblem};
use crate::reference::{HyperParams, Method};

pub const BENCH_SPEC_VERSION: u64 = 1;
pub const DEFAULT_GAP_TARGET: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSource {
    Path { path: PathBuf },
    Generate(GeneratorSpec),
}

impl ProblemSource {
    /// File stem, or `mpc_N{N}_s{seed}` for generated problems.
    pub fn id(&self) -> String {
        match self {
            ProblemSource::Path { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            ProblemSource::Generate(g) => generated_id(g),
        }
    }

    /// Relative paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<QpProblem> {
        match self {
            ProblemSource::Path { path } => match base {
                Some(b) if path.is_relative() => load_problem(b.join(path)),
                _ => load_problem(path),
            },
            ProblemSource::Generate(g) => generate_problem(g),
        }
    }
}

pub fn generated_id(g: &GeneratorSpec) -> String {
    format!("mpc_N{}_s{}", g.horizon, g.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverMode {
    #[serde(rename = "float-gd")]
    FloatGd,
    #[serde(rename = "float-gdcc")]
    FloatGdcc,
    #[serde(rename = "float-pipg")]
    FloatPipg,
    #[serde(rename = "fxp")]
    Fxp,
}

impl SolverMode {
    pub fn method(self) -> Method {
        match self {
            SolverMode::FloatGd => Method::Gd,
            SolverMode::FloatGdcc => Method::Gdcc,
            SolverMode::FloatPipg | SolverMode::Fxp => Method::Pipg,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolverMode::FloatGd => "float-gd",
            SolverMode::FloatGdcc => "float-gdcc",
            SolverMode::FloatPipg => "float-pipg",
            SolverMode::Fxp => "fxp",
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float-gd" => Ok(SolverMode::FloatGd),
            "float-gdcc" => Ok(SolverMode::FloatGdcc),
            "float-pipg" => Ok(SolverMode::FloatPipg),
            "fxp" => Ok(SolverMode::Fxp),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?}; expected float-gd, float-gdcc, float-pipg or fxp"
            ))),
        }
    }
}

fn default_weight_bits() -> u32 {
    8
}
fn default_period() -> usize {
    100
}
fn default_npc() -> usize {
    1024
}
fn default_c_sync() -> u64 {
    DEFAULT_C_SYNC
}
fn default_true() -> bool {
    true
}

/// One column of the solver matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub mode: SolverMode,
    #[serde(default)]
    pub state_fmt: FxpFormat,
    #[serde(default = "default_weight_bits")]
    pub weight_bits: u32,
    #[serde(default = "default_period")]
    pub alpha_period: usize,
    #[serde(default = "default_period")]
    pub beta_period: usize,
    #[serde(default)]
    pub event_threshold: u64,
    #[serde(default = "default_npc")]
    pub neurons_per_core: usize,
    #[serde(default = "default_c_sync")]
    pub c_sync: u64,
    #[serde(default = "default_true")]
    pub precondition: bool,
}

impl SolverSpec {
    pub fn new(mode: SolverMode) -> Self {
        Self {
            name: None,
            mode,
            state_fmt: FxpFormat::default(),
            weight_bits: default_weight_bits(),
            alpha_period: default_period(),
            beta_period: default_period(),
            event_threshold: 0,
            neurons_per_core: default_npc(),
            c_sync: DEFAULT_C_SYNC,
            precondition: true,
        }
    }

    pub fn fxp(state_fmt: FxpFormat, weight_bits: u32) -> Self {
        Self {
            state_fmt,
            weight_bits,
            ..Self::new(SolverMode::Fxp)
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.mode {
            SolverMode::Fxp => format!("fxp-{}-w{}", self.state_fmt, self.weight_bits),
            m => m.to_string(),
        }
    }

    /// Step sizes estimated from the iterated problem, with this spec's periods.
    pub fn hyperparams(&self, estimated: HyperParams, budget: usize) -> HyperParams {
        estimated
            .with_periods(self.alpha_period, self.beta_period)
            .with_budget(budget, 0.0)
    }

    pub fn network_config(&self, budget: usize) -> NetworkConfig {
        NetworkConfig {
            state_fmt: self.state_fmt,
            weight_bits: self.weight_bits,
            alpha_decay_period: self.alpha_period,
            beta_growth_period: self.beta_period,
            max_iters: budget.max(1),
            neurons_per_core: self.neurons_per_core,
            event_threshold: self.event_threshold,
            c_sync: self.c_sync,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StudyKind {
    Gap,
    Scaling,
    Warmstart {
        magnitude: f64,
        chain: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_study() -> StudyKind {
    StudyKind::Gap
}
fn default_gap_target() -> f64 {
    DEFAULT_GAP_TARGET
}
fn default_repetitions() -> usize {
    1
}
fn default_budget() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub version: u64,
    pub problems: Vec<ProblemSource>,
    pub solvers: Vec<SolverSpec>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_gap_target")]
    pub gap_target: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_study")]
    pub study: StudyKind,
    /// Used when no output directory is given on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl BenchSpec {
    pub fn new(problems: Vec<ProblemSource>, solvers: Vec<SolverSpec>) -> Self {
        Self {
            version: BENCH_SPEC_VERSION,
            problems,
            solvers,
            budget: default_budget(),
            gap_target: DEFAULT_GAP_TARGET,
            repetitions: 1,
            study: StudyKind::Gap,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.version != BENCH_SPEC_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: BENCH_SPEC_VERSION,
            });
        }
        if !(self.gap_target > 0.0 && self.gap_target < 1.0) {
            return bad(format!("gap_target {} outside (0, 1)", self.gap_target));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.problems.is_empty() {
            return bad("no problems given".into());
        }
        if self.solvers.is_empty() {
            return bad("no solvers given".into());
        }
        for s in &self.solvers {
            s.network_config(self.budget).validate()?;
        }
        if let StudyKind::Warmstart { magnitude, chain, .. } = self.study {
            if chain < 2 {
                return bad(format!("warm-start chain length must be at least 2, got {chain}"));
            }
            if !(magnitude >= 0.0) {
                return bad(format!("perturbation magnitude {magnitude} is negative"));
            }
            if self.problems.iter().any(|p| matches!(p, ProblemSource::Path { .. })) {
                return bad("warm-start chains need generated problems to perturb".into());
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}
