//! Gap, scaling and warm-start studies.
//!
//! Every study measures solver traces against a high-accuracy float PIPG
//! optimum: `gap = |f − f*| / |f*|` and violation normalized by `‖x*‖₂`.
//! Results are one CSV trace per cell plus a versioned `summary.json`.

mod cell;
mod output;
mod spec;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cell::{
    execute, normalized_violation, optimality_gap, reference_optimum, score, score_rows, CellRun,
    EventTotals, PortableState, ReferenceOptimum, ScalingSummary, Score, ScoredRow, REFERENCE_MAX_ITERS,
    REFERENCE_TOL,
};
pub use output::{read_trace_csv, write_results, write_trace_csv, RESULTS_VERSION, TRACE_COLUMNS};
pub use spec::{
    generated_id, BenchSpec, ProblemSource, SolverMode, SolverSpec, StudyKind, BENCH_SPEC_VERSION,
    DEFAULT_GAP_TARGET,
};

use crate::error::{Error, Result};
use crate::mpcgen::{generate_random, perturb, tile, StageModel};
use crate::neurosolver::PartitionReport;
use crate::problem::QpProblem;
use crate::reference::HyperParams;

pub const REFERENCE_DESCRIPTION: &str =
    "float PIPG on the Ruiz-scaled problem, constant steps, stopped at relative cost change 1e-9";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Warm,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartMeta {
    pub magnitude: f64,
    pub seed: u64,
    pub link: usize,
    pub arm: Arm,
}

/// Everything needed to reproduce a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetadata {
    pub problem: ProblemSource,
    pub solver: SolverSpec,
    pub budget: usize,
    pub gap_target: f64,
    pub repetition: usize,
    pub hyperparams: HyperParams,
    pub scaling: ScalingSummary,
    pub reference: ReferenceOptimum,
    pub warm_start: Option<WarmStartMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub problem: String,
    pub solver: String,
    #[serde(rename = "L")]
    pub n_vars: usize,
    #[serde(rename = "M")]
    pub n_constraints: usize,
    #[serde(flatten)]
    pub score: Score,
    pub events: Option<EventTotals>,
    pub partition: Option<PartitionReport>,
    pub wall_time_s: f64,
    pub trace_file: String,
    pub metadata: CellMetadata,
}

impl CellRecord {
    /// True when both records describe the same deterministic outcome.
    pub fn same_outcome(&self, other: &CellRecord) -> bool {
        self.score == other.score
            && self.events == other.events
            && self.partition == other.partition
            && self.metadata == other.metadata
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unusable {
    pub problem: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: String,
    pub cells: usize,
    pub reached: usize,
    /// Over cells that reached the target.
    pub mean_iterations_to_gap: Option<f64>,
    pub median_iterations_to_gap: Option<f64>,
    pub max_iterations_to_gap: Option<usize>,
    pub mean_terminal_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub problem: String,
    #[serde(rename = "L")]
    pub n_vars: usize,
    pub iterations_to_gap: Option<usize>,
    pub mac_ops_to_gap: u64,
    pub messages_to_gap: u64,
    /// Partition cost per iteration times iterations to gap (budget if not reached).
    pub model_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub solver: String,
    pub points: Vec<ScalingPoint>,
    /// Log-log least-squares slope of mac_ops_to_gap against L.
    pub slope_mac_ops: Option<f64>,
    pub slope_model_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: String,
    pub solver: String,
    /// Means over links after the first; a link that misses the target
    /// counts as the full budget.
    pub warm_mean: f64,
    pub cold_mean: f64,
    pub warm_not_worse: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub solvers: Vec<SolverSummary>,
    pub scaling: Vec<ScalingFit>,
    pub warmstart: Vec<ChainSummary>,
}

#[derive(Debug, Clone)]
pub struct BenchResults {
    pub spec: BenchSpec,
    pub records: Vec<CellRecord>,
    /// Scored trace of each record, same order.
    pub traces: Vec<Vec<ScoredRow>>,
    pub unusable: Vec<Unusable>,
    pub summary: Summary,
}

fn trace_file_name(problem: &str, solver: &str, repetition: usize, ws: Option<&WarmStartMeta>) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
            .collect()
    };
    match ws {
        Some(w) => format!(
            "{}__{}__link{:02}__{}.csv",
            clean(problem),
            clean(solver),
            w.link,
            if w.arm == Arm::Warm { "warm" } else { "cold" }
        ),
        None => format!("{}__{}__r{}.csv", clean(problem), clean(solver), repetition),
    }
}

struct Prepared {
    source: ProblemSource,
    id: String,
    problem: QpProblem,
    reference: ReferenceOptimum,
}

fn prepare(source: &ProblemSource, base: Option<&Path>) -> Result<std::result::Result<Prepared, Unusable>> {
    let id = source.id();
    let problem = source.load(base)?;
    problem.validate().into_result()?;
    let reference = match reference_optimum(&problem) {
        Ok(r) if r.converged => r,
        Ok(r) => {
            return Ok(Err(Unusable {
                problem: id,
                reason: format!("reference did not converge in {} iterations", r.iterations),
            }))
        }
        Err(e) => {
            return Ok(Err(Unusable {
                problem: id,
                reason: format!("reference failed: {e}"),
            }))
        }
    };
    Ok(Ok(Prepared {
        source: source.clone(),
        id,
        problem,
        reference,
    }))
}

#[allow(clippy::too_many_arguments)]
fn record_cell(
    prepared: &Prepared,
    solver: &SolverSpec,
    budget: usize,
    gap_target: f64,
    repetition: usize,
    ws: Option<WarmStartMeta>,
    run: &CellRun,
) -> (CellRecord, Vec<ScoredRow>) {
    let rows = score_rows(&run.trace, &prepared.reference);
    let label = solver.label();
    let record = CellRecord {
        problem: prepared.id.clone(),
        solver: label.clone(),
        n_vars: prepared.problem.n_vars(),
        n_constraints: prepared.problem.n_constraints(),
        score: score(&rows, gap_target),
        events: run.events,
        partition: run.partition.clone(),
        wall_time_s: run.wall_time_s,
        trace_file: trace_file_name(&prepared.id, &label, repetition, ws.as_ref()),
        metadata: CellMetadata {
            problem: prepared.source.clone(),
            solver: solver.clone(),
            budget,
            gap_target,
            repetition,
            hyperparams: run.hyperparams.clone(),
            scaling: run.scaling.clone(),
            reference: prepared.reference.clone(),
            warm_start: ws,
        },
    };
    (record, rows)
}

fn prepare_all(spec: &BenchSpec, base: Option<&Path>) -> Result<(Vec<Prepared>, Vec<Unusable>)> {
    let prepared: Vec<_> = spec
        .problems
        .par_iter()
        .map(|s| prepare(s, base))
        .collect::<Result<_>>()?;
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for p in prepared {
        match p {
            Ok(p) => ok.push(p),
            Err(u) => bad.push(u),
        }
    }
    Ok((ok, bad))
}

/// Relative problem paths in `spec` resolve against `base`.
pub fn run_gap_study(spec: &BenchSpec, base: Option<&Path>) -> Result<BenchResults> {
    spec.validate()?;
    let (prepared, unusable) = prepare_all(spec, base)?;
    let cells: Vec<(usize, usize, usize)> = (0..prepared.len())
        .flat_map(|p| (0..spec.solvers.len()).flat_map(move |s| (0..spec.repetitions).map(move |r| (p, s, r))))
        .collect();
    let outcomes: Vec<(CellRecord, Vec<ScoredRow>)> = cells
        .par_iter()
        .map(|&(p, s, r)| {
            let solver = &spec.solvers[s];
            let run = execute(&prepared[p].problem, solver, spec.budget, None)?;
            Ok(record_cell(&prepared[p], solver, spec.budget, spec.gap_target, r, None, &run))
        })
        .collect::<Result<_>>()?;
    let (records, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut results = BenchResults {
        spec: spec.clone(),
        records,
        traces,
        unusable,
        summary: Summary::default(),
    };
    results.summary = summarize(&results.spec, &results.records, &results.traces);
    Ok(results)
}

/// A gap study whose summary adds log-log fits of cost against L.
pub fn run_scaling_study(spec: &BenchSpec, base: Option<&Path>) -> Result<BenchResults> {
    let spec = BenchSpec {
        study: StudyKind::Scaling,
        ..spec.clone()
    };
    run_gap_study(&spec, base)
}

fn chain_seed(seed: u64, link: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(link as u64)
}

/// Models of a perturbation chain: link 0 is the base model, each later link
/// perturbs its predecessor.
pub fn perturbation_chain(base: &StageModel, magnitude: f64, seed: u64, length: usize) -> Result<Vec<StageModel>> {
    let mut chain = vec![base.clone()];
    for link in 1..length {
        let next = perturb(&chain[link - 1], magnitude, chain_seed(seed, link))?;
        chain.push(next);
    }
    Ok(chain)
}

fn chain_problems(source: &ProblemSource, magnitude: f64, seed: u64, length: usize) -> Result<Vec<QpProblem>> {
    let ProblemSource::Generate(g) = source else {
        return Err(Error::InvalidArgument("warm-start chains need generated problems".into()));
    };
    let base = generate_random(g)?;
    Ok(perturbation_chain(&base, magnitude, seed, length)?.iter().map(tile).collect())
}

/// Per chain and solver: cold starts on every link against warm starts from
/// the previous link's final state.
pub fn run_warmstart_study(spec: &BenchSpec) -> Result<BenchResults> {
    spec.validate()?;
    let StudyKind::Warmstart { magnitude, chain, seed } = spec.study else {
        return Err(Error::InvalidArgument("spec is not a warm-start study".into()));
    };
    let jobs: Vec<(usize, usize)> = (0..spec.problems.len())
        .flat_map(|p| (0..spec.solvers.len()).map(move |s| (p, s)))
        .collect();
    let per_job: Vec<(Vec<(CellRecord, Vec<ScoredRow>)>, Vec<Unusable>)> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let source = &spec.problems[p];
            let solver = &spec.solvers[s];
            let chain_seed = seed.wrapping_add(p as u64);
            let problems = chain_problems(source, magnitude, chain_seed, chain)?;
            let mut out = Vec::new();
            let mut unusable = Vec::new();
            let mut carried: Option<PortableState> = None;
            for (link, problem) in problems.into_iter().enumerate() {
                let reference = reference_optimum(&problem)?;
                let id = format!("{}_link{link:02}", source.id());
                if !reference.converged {
                    unusable.push(Unusable {
                        problem: id,
                        reason: "reference did not converge".into(),
                    });
                    carried = None;
                    continue;
                }
                let prepared = Prepared {
                    source: source.clone(),
                    id: source.id(),
                    problem,
                    reference,
                };
                let cold = execute(&prepared.problem, solver, spec.budget, None)?;
                let warm = match (&carried, link) {
                    (Some(state), l) if l > 0 => execute(&prepared.problem, solver, spec.budget, Some(state))?,
                    _ => cold.clone(),
                };
                carried = Some(warm.final_state.clone());
                for (arm, run) in [(Arm::Warm, &warm), (Arm::Cold, &cold)] {
                    let ws = WarmStartMeta {
                        magnitude,
                        seed: chain_seed,
                        link,
                        arm,
                    };
                    out.push(record_cell(&prepared, solver, spec.budget, spec.gap_target, 0, Some(ws), run));
                }
            }
            Ok((out, unusable))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut unusable = Vec::new();
    for (cells, bad) in per_job {
        for (r, t) in cells {
            records.push(r);
            traces.push(t);
        }
        unusable.extend(bad);
    }
    let mut results = BenchResults {
        spec: spec.clone(),
        records,
        traces,
        unusable,
        summary: Summary::default(),
    };
    results.summary = summarize(&results.spec, &results.records, &results.traces);
    Ok(results)
}

/// Dispatches on `spec.study`.
pub fn run_bench(spec: &BenchSpec, base: Option<&Path>) -> Result<BenchResults> {
    match spec.study {
        StudyKind::Gap => run_gap_study(spec, base),
        StudyKind::Scaling => run_scaling_study(spec, base),
        StudyKind::Warmstart { .. } => run_warmstart_study(spec),
    }
}

/// Re-runs a cell from its metadata alone.
pub fn replay(meta: &CellMetadata, base: Option<&Path>) -> Result<(CellRecord, Vec<ScoredRow>)> {
    let (problem, init) = match &meta.warm_start {
        None => (meta.problem.load(base)?, None),
        Some(ws) => {
            let problems = chain_problems(&meta.problem, ws.magnitude, ws.seed, ws.link + 1)?;
            let mut carried = None;
            if ws.arm == Arm::Warm {
                for p in &problems[..ws.link] {
                    let run = execute(p, &meta.solver, meta.budget, carried.as_ref())?;
                    carried = Some(run.final_state);
                }
            }
            (problems[ws.link].clone(), carried)
        }
    };
    let reference = reference_optimum(&problem)?;
    let prepared = Prepared {
        id: meta.problem.id(),
        source: meta.problem.clone(),
        problem,
        reference,
    };
    let run = execute(&prepared.problem, &meta.solver, meta.budget, init.as_ref())?;
    Ok(record_cell(
        &prepared,
        &meta.solver,
        meta.budget,
        meta.gap_target,
        meta.repetition,
        meta.warm_start.clone(),
        &run,
    ))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Least-squares slope of `ln y` against `ln x`; needs two distinct x and positive values.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Summary statistics; derivable from the records and their traces alone.
pub fn summarize(spec: &BenchSpec, records: &[CellRecord], traces: &[Vec<ScoredRow>]) -> Summary {
    let mut labels: Vec<String> = Vec::new();
    for r in records {
        if !labels.contains(&r.solver) {
            labels.push(r.solver.clone());
        }
    }
    let is_cold_or_plain = |r: &CellRecord| r.metadata.warm_start.as_ref().is_none_or(|w| w.arm == Arm::Cold);
    let solvers = labels
        .iter()
        .map(|label| {
            let cells: Vec<&CellRecord> = records
                .iter()
                .filter(|r| &r.solver == label && is_cold_or_plain(r))
                .collect();
            let its: Vec<f64> = cells
                .iter()
                .filter_map(|r| r.score.iterations_to_gap.map(|i| i as f64))
                .collect();
            SolverSummary {
                solver: label.clone(),
                cells: cells.len(),
                reached: its.len(),
                mean_iterations_to_gap: mean(&its),
                median_iterations_to_gap: median(&its),
                max_iterations_to_gap: cells.iter().filter_map(|r| r.score.iterations_to_gap).max(),
                mean_terminal_gap: mean(&cells.iter().map(|r| r.score.terminal_gap).collect::<Vec<_>>())
                    .unwrap_or(0.0),
            }
        })
        .collect();

    let scaling = if spec.study == StudyKind::Scaling {
        labels
            .iter()
            .map(|label| {
                let points: Vec<ScalingPoint> = records
                    .iter()
                    .zip(traces)
                    .filter(|(r, _)| &r.solver == label && r.metadata.repetition == 0)
                    .map(|(r, _)| ScalingPoint {
                        problem: r.problem.clone(),
                        n_vars: r.n_vars,
                        iterations_to_gap: r.score.iterations_to_gap,
                        mac_ops_to_gap: r.score.mac_ops_to_gap,
                        messages_to_gap: r.score.messages_to_gap,
                        model_cost: r.partition.as_ref().map(|p| {
                            p.per_iteration_cost * r.score.iterations_to_gap.unwrap_or(r.metadata.budget) as f64
                        }),
                    })
                    .collect();
                let mac: Vec<(f64, f64)> = points.iter().map(|p| (p.n_vars as f64, p.mac_ops_to_gap as f64)).collect();
                let model: Vec<(f64, f64)> = points
                    .iter()
                    .filter_map(|p| p.model_cost.map(|c| (p.n_vars as f64, c)))
                    .collect();
                ScalingFit {
                    solver: label.clone(),
                    slope_mac_ops: loglog_slope(&mac),
                    slope_model_cost: loglog_slope(&model),
                    points,
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut warmstart = Vec::new();
    if matches!(spec.study, StudyKind::Warmstart { .. }) {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in records {
            let k = (r.problem.clone(), r.solver.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (chain, solver) in keys {
            let arm_mean = |arm: Arm| {
                let its: Vec<f64> = records
                    .iter()
                    .filter(|r| r.problem == chain && r.solver == solver)
                    .filter(|r| r.metadata.warm_start.as_ref().is_some_and(|w| w.arm == arm && w.link > 0))
                    .map(|r| r.score.iterations_to_gap.unwrap_or(r.metadata.budget) as f64)
                    .collect();
                mean(&its).unwrap_or(f64::NAN)
            };
            let (warm_mean, cold_mean) = (arm_mean(Arm::Warm), arm_mean(Arm::Cold));
            warmstart.push(ChainSummary {
                chain,
                solver,
                warm_mean,
                cold_mean,
                warm_not_worse: warm_mean <= cold_mean,
            });
        }
    }
    Summary {
        solvers,
        scaling,
        warmstart,
    }
}
