//! One (problem, solver) run and its scoring against the reference optimum.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::neurosolver::{build_network, EventStats, PartitionReport};
use crate::precond::{ruiz_equilibrate, OriginalFrame, Scaling, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::problem::QpProblem;
use crate::reference::{estimate_curvature, estimate_hyperparams, run, stable_hyperparams, ConvergenceTrace, HyperParams, Method, SolverState};

use super::spec::{SolverMode, SolverSpec};

/// Reference run settings: constant steps until the relative cost change
/// drops below `REFERENCE_TOL`.
pub const REFERENCE_TOL: f64 = 1e-9;
pub const REFERENCE_MAX_ITERS: usize = 200_000;

/// The high-accuracy optimum every gap is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub cost: f64,
    pub violation: f64,
    /// ‖x*‖₂, the violation normalizer.
    pub x_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn reference_optimum(problem: &QpProblem) -> Result<ReferenceOptimum> {
    let (scaled, scaling) = ruiz_equilibrate(problem, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let frame = OriginalFrame::new(problem.clone(), scaling);
    let hp = stable_hyperparams(estimate_curvature(&scaled)).with_budget(REFERENCE_MAX_ITERS, REFERENCE_TOL);
    let r = run(&scaled, Method::Pipg, &hp, None, Some(&frame))?;
    Ok(ReferenceOptimum {
        cost: r.solution.cost,
        violation: r.solution.violation,
        x_norm: r.solution.x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        iterations: r.solution.iterations,
        converged: r.solution.converged,
    })
}

/// `|f − f*| / |f*|`; zero when both `|f*|` and `|f − f*|` are negligible.
pub fn optimality_gap(cost: f64, reference: f64) -> f64 {
    let diff = (cost - reference).abs();
    if reference.abs() < 1e-12 {
        if diff < 1e-9 {
            0.0
        } else {
            diff / 1e-12
        }
    } else {
        diff / reference.abs()
    }
}

/// Violation divided by ‖x*‖₂ (unnormalized when x* is zero).
pub fn normalized_violation(violation: f64, reference: &ReferenceOptimum) -> f64 {
    if reference.x_norm > 1e-12 {
        violation / reference.x_norm
    } else {
        violation
    }
}

/// One trace row scored against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub iter: usize,
    pub cost: f64,
    pub gap: f64,
    pub violation: f64,
    pub messages: u64,
    pub mac_ops: u64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// First iteration with gap and normalized violation both within target.
    pub iterations_to_gap: Option<usize>,
    /// Iterate minimizing `max(gap, violation)` (earliest on ties).
    pub best_iter: usize,
    /// `max(gap, violation)` at the best iterate; never increases with budget.
    pub terminal_gap: f64,
    /// Normalized violation at the best iterate.
    pub terminal_violation: f64,
    pub final_gap: f64,
    pub final_violation: f64,
    /// MACs and messages spent up to `iterations_to_gap` (whole run if not reached).
    pub mac_ops_to_gap: u64,
    pub messages_to_gap: u64,
}

pub fn score_rows(trace: &ConvergenceTrace, reference: &ReferenceOptimum) -> Vec<ScoredRow> {
    trace
        .records
        .iter()
        .map(|r| ScoredRow {
            iter: r.iter,
            cost: r.cost,
            gap: optimality_gap(r.cost, reference.cost),
            violation: normalized_violation(r.violation, reference),
            messages: r.messages,
            mac_ops: r.mac_ops,
            saturations: r.saturations,
        })
        .collect()
}

/// Bookkeeping over scored rows; the first row is the initial state.
pub fn score(rows: &[ScoredRow], gap_target: f64) -> Score {
    let hit = rows
        .iter()
        .position(|r| r.gap <= gap_target && r.violation <= gap_target);
    let mut best = 0;
    let merit = |r: &ScoredRow| r.gap.max(r.violation);
    for (i, r) in rows.iter().enumerate() {
        if merit(r) < merit(&rows[best]) {
            best = i;
        }
    }
    let upto = hit.map(|h| h + 1).unwrap_or(rows.len());
    let last = rows.last().expect("trace has an initial record");
    Score {
        iterations_to_gap: hit.map(|h| rows[h].iter - rows[0].iter),
        best_iter: rows[best].iter,
        terminal_gap: merit(&rows[best]),
        terminal_violation: rows[best].violation,
        final_gap: last.gap,
        final_violation: last.violation,
        mac_ops_to_gap: rows[..upto].iter().map(|r| r.mac_ops).sum(),
        messages_to_gap: rows[..upto].iter().map(|r| r.messages).sum(),
    }
}

/// Solver state in original (unscaled) coordinates, for carrying across problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl PortableState {
    fn from_scaled(scaling: &Scaling, x: &[f64], v: &[f64], w: &[f64]) -> Result<Self> {
        Ok(Self {
            x: scaling.unscale_primal(x)?,
            v: scaling.unscale_dual(v)?,
            w: scaling.unscale_dual(w)?,
        })
    }

    fn to_scaled(&self, scaling: &Scaling) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        Ok((
            scaling.scale_primal(&self.x)?,
            scaling.scale_dual(&self.v)?,
            scaling.scale_dual(&self.w)?,
        ))
    }
}

/// Totals of an [`EventStats`] without the per-iteration vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTotals {
    pub messages_sent: u64,
    pub mac_ops: u64,
    pub neuron_updates: u64,
    pub saturations: u64,
}

impl From<&EventStats> for EventTotals {
    fn from(s: &EventStats) -> Self {
        Self {
            messages_sent: s.messages_sent,
            mac_ops: s.mac_ops,
            neuron_updates: s.neuron_updates,
            saturations: s.saturations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub ruiz_iterations: usize,
    pub ruiz_converged: bool,
    pub cost_scalar: f64,
}

#[derive(Debug, Clone)]
pub struct CellRun {
    pub trace: ConvergenceTrace,
    pub events: Option<EventTotals>,
    pub partition: Option<PartitionReport>,
    pub final_state: PortableState,
    pub hyperparams: HyperParams,
    pub scaling: ScalingSummary,
    pub wall_time_s: f64,
}

/// Runs `solver` on `problem` for `budget` iterations, optionally starting
/// from a state carried over from a related problem.
pub fn execute(
    problem: &QpProblem,
    solver: &SolverSpec,
    budget: usize,
    init: Option<&PortableState>,
) -> Result<CellRun> {
    let (scaled, scaling) = if solver.precondition {
        ruiz_equilibrate(problem, DEFAULT_MAX_ITERS, DEFAULT_TOL)?
    } else {
        (problem.clone(), Scaling::identity(problem.n_vars(), problem.n_constraints()))
    };
    let frame = OriginalFrame::new(problem.clone(), scaling.clone());
    let hp = solver.hyperparams(estimate_hyperparams(&scaled), budget);
    let init_scaled = init.map(|s| s.to_scaled(&scaling)).transpose()?;
    let summary = ScalingSummary {
        ruiz_iterations: scaling.iterations,
        ruiz_converged: scaling.converged,
        cost_scalar: scaling.c,
    };

    let start = Instant::now();
    let (trace, events, partition, final_state) = match solver.mode {
        SolverMode::Fxp => {
            let cfg = solver.network_config(budget);
            let mut net = build_network(&scaled, &hp, &cfg)?.with_frame(frame);
            if let Some((x, v, w)) = &init_scaled {
                net.warm_start(x, Some(v), Some(w))?;
            }
            let (_, trace, stats) = net.solve(budget)?;
            let fs = PortableState::from_scaled(&scaling, &net.x_scaled(), &net.v_scaled(), &net.w_scaled())?;
            let part = net.partition(solver.neurons_per_core)?;
            (trace, Some(EventTotals::from(&stats)), Some(part), fs)
        }
        mode => {
            let init_state = init_scaled.map(|(x, v, w)| SolverState {
                x,
                v,
                w,
                ..SolverState::cold(&scaled, &hp)
            });
            let r = run(&scaled, mode.method(), &hp, init_state, Some(&frame))?;
            let fs = PortableState::from_scaled(&scaling, &r.state.x, &r.state.v, &r.state.w)?;
            (r.trace, None, None, fs)
        }
    };
    Ok(CellRun {
        trace,
        events,
        partition,
        final_state,
        hyperparams: hp,
        scaling: summary,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
