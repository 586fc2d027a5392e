//! Full-precision versions of the three network dynamics:
//!
//! * plain gradient descent, `x ← (I − αQ)x − αp`;
//! * gradient descent with a relu-gated constraint correction,
//!   `x ← (I − αQ)x − αp − β·Aᵀ·relu(Ax − k)`;
//! * the primal-dual PIPG iteration
//!   `x ← π(x − α(Qx + p + Aᵀv))`, `w ← w + β(Ax − k)`, `v ← relu(w)`.
//!
//! Step sizes follow the same shift schedule as the fixed-point network: α is
//! halved every `alpha_decay_period` iterations and β doubled every
//! `beta_growth_period` iterations (capped at `BETA_CAP_FACTOR·β₀`).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precond::OriginalFrame;
use crate::problem::{QpProblem, Sense, Solution, SparseMatrix};

/// β never grows beyond this multiple of β₀.
pub const BETA_CAP_FACTOR: f64 = 1024.0;
/// Power-iteration steps used by [`estimate_curvature`].
pub const POWER_ITERATIONS: usize = 50;
const POWER_SEED: u64 = 0x5EED_0F_C0DE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha0: f64,
    pub beta0: f64,
    /// Halve α every this many iterations; 0 disables the decay.
    pub alpha_decay_period: usize,
    /// Double β every this many iterations; 0 disables the growth.
    pub beta_growth_period: usize,
    pub max_iters: usize,
    pub conv_tol: f64,
    /// Record a copy of x every this many iterations; 0 records none.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta0: 1.0,
            alpha_decay_period: 100,
            beta_growth_period: 100,
            max_iters: 1000,
            conv_tol: 1e-6,
            snapshot_every: 0,
        }
    }
}

impl HyperParams {
    /// Same step sizes with the shift schedule switched off.
    pub fn constant_steps(mut self) -> Self {
        self.alpha_decay_period = 0;
        self.beta_growth_period = 0;
        self
    }

    pub fn with_periods(mut self, alpha: usize, beta: usize) -> Self {
        self.alpha_decay_period = alpha;
        self.beta_growth_period = beta;
        self
    }

    pub fn with_budget(mut self, max_iters: usize, conv_tol: f64) -> Self {
        self.max_iters = max_iters;
        self.conv_tol = conv_tol;
        self
    }

    /// True when `alpha0 · λ_max < 2`, the stability bound of plain gradient descent.
    pub fn gd_stable(&self, lambda_max: f64) -> bool {
        self.alpha0 * lambda_max < 2.0
    }
}

/// Largest eigenvalue of Q and largest singular value of A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub lambda_max: f64,
    pub sigma_max: f64,
}

fn seeded_unit_start(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Rayleigh-quotient power iteration for the top eigenvalue of a PSD matrix.
fn top_eigenvalue(q: &SparseMatrix) -> f64 {
    let n = q.n_rows();
    if n == 0 || q.nnz() == 0 {
        return 0.0;
    }
    let mut v = seeded_unit_start(n);
    let mut qv = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        q.spmv_into(&v, &mut qv);
        lambda = dot(&v, &qv) / dot(&v, &v);
        v.copy_from_slice(&qv);
        if normalize(&mut v) == 0.0 {
            return 0.0;
        }
    }
    lambda.max(0.0)
}

/// Power iteration on AᵀA.
fn top_singular_value(a: &SparseMatrix) -> f64 {
    if a.nnz() == 0 {
        return 0.0;
    }
    let at = a.transpose();
    let mut v = seeded_unit_start(a.n_cols());
    let mut av = vec![0.0; a.n_rows()];
    let mut s2 = 0.0;
    for _ in 0..POWER_ITERATIONS {
        a.spmv_into(&v, &mut av);
        s2 = dot(&av, &av) / dot(&v, &v);
        at.spmv_into(&av, &mut v);
        if normalize(&mut v) == 0.0 {
            break;
        }
    }
    s2.sqrt()
}

pub fn estimate_curvature(problem: &QpProblem) -> Curvature {
    Curvature {
        lambda_max: top_eigenvalue(&problem.q),
        sigma_max: top_singular_value(&problem.a),
    }
}

/// `beta0 = 1/max(σ, 1)`, `alpha0 = 1/(λ + σ·beta0)`, periods 100/100.
pub fn estimate_hyperparams(problem: &QpProblem) -> HyperParams {
    hyperparams_from(estimate_curvature(problem))
}

pub fn hyperparams_from(curv: Curvature) -> HyperParams {
    let beta0 = 1.0 / curv.sigma_max.max(1.0);
    let denom = curv.lambda_max + curv.sigma_max * beta0;
    let alpha0 = if denom > 0.0 { 1.0 / denom } else { 1.0 };
    HyperParams {
        alpha0,
        beta0,
        ..HyperParams::default()
    }
}

/// Constant steps with `α·(λ + β·σ²) ≤ 1`, which keeps PIPG contractive
/// without a schedule. [`hyperparams_from`] only bounds `α·λ`, and once
/// `σ > λ + 1` its constant-step iteration can oscillate indefinitely.
pub fn stable_hyperparams(curv: Curvature) -> HyperParams {
    let beta0 = 1.0 / curv.sigma_max.max(1.0);
    let denom = curv.lambda_max + curv.sigma_max * curv.sigma_max * beta0;
    let alpha0 = if denom > 0.0 { 1.0 / denom } else { 1.0 };
    HyperParams {
        alpha0,
        beta0,
        ..HyperParams::default()
    }
    .constant_steps()
}

/// `max(r_j, 0)` on inequality rows, `r_j` on equality rows.
pub fn relu_gate(r: &[f64], senses: &[Sense]) -> Vec<f64> {
    r.iter()
        .zip(senses)
        .map(|(&rj, s)| match s {
            Sense::Ineq => rj.max(0.0),
            Sense::Eq => rj,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gd,
    Gdcc,
    Pipg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub iter: usize,
}

impl SolverState {
    pub fn cold(problem: &QpProblem, hp: &HyperParams) -> Self {
        Self {
            x: vec![0.0; problem.n_vars()],
            v: vec![0.0; problem.n_constraints()],
            w: vec![0.0; problem.n_constraints()],
            alpha: hp.alpha0,
            beta: hp.beta0,
            iter: 0,
        }
    }

    /// Cold state with a given primal start.
    pub fn from_x(problem: &QpProblem, hp: &HyperParams, x: Vec<f64>) -> Self {
        Self {
            x,
            ..Self::cold(problem, hp)
        }
    }

    fn all_finite(&self) -> bool {
        self.x.iter().chain(&self.v).chain(&self.w).all(|v| v.is_finite())
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub cost: f64,
    pub violation: f64,
    /// Nonzero state values broadcast during this iteration.
    pub messages: u64,
    /// Multiply-accumulates those broadcasts trigger at their receivers.
    pub mac_ops: u64,
    pub saturations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Initial state at `iter = 0`, then one record per executed iteration.
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl ConvergenceTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Writes `iter,cost,violation,messages` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "cost", "violation", "messages"])?;
        for r in &self.records {
            w.write_record(&[
                r.iter.to_string(),
                r.cost.to_string(),
                r.violation.to_string(),
                r.messages.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Everything a reference run produces.
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub solution: Solution,
    pub trace: ConvergenceTrace,
    /// Final iterate in the coordinates of the problem that was iterated on.
    pub state: SolverState,
}

/// Step-size schedule shared with the fixed-point network.
#[derive(Debug, Clone, Copy)]
struct Schedule {
    alpha_period: usize,
    beta_period: usize,
    beta_max: f64,
}

impl Schedule {
    fn new(hp: &HyperParams) -> Self {
        Self {
            alpha_period: hp.alpha_decay_period,
            beta_period: hp.beta_growth_period,
            beta_max: BETA_CAP_FACTOR * hp.beta0,
        }
    }

    /// Called after iteration number `done` (1-based) has completed.
    fn advance(&self, state: &mut SolverState, done: usize) {
        if self.alpha_period > 0 && done % self.alpha_period == 0 {
            state.alpha *= 0.5;
        }
        if self.beta_period > 0 && done % self.beta_period == 0 {
            state.beta = (state.beta * 2.0).min(self.beta_max);
        }
    }
}

/// Per-neuron fan-out counts used to tally messages and MACs.
struct FanOut {
    x: Vec<u64>,
    v: Vec<u64>,
}

impl FanOut {
    fn new(problem: &QpProblem, include_a: bool) -> Self {
        let q_cols = problem.q.col_nnz();
        let a_cols = problem.a.col_nnz();
        let x = q_cols
            .iter()
            .zip(&a_cols)
            .map(|(&q, &a)| (q + if include_a { a } else { 0 }) as u64)
            .collect();
        let v = (0..problem.n_constraints())
            .map(|j| problem.a.row_nnz(j) as u64)
            .collect();
        Self { x, v }
    }

    fn tally(&self, x: &[f64], v: &[f64]) -> (u64, u64) {
        let mut messages = 0;
        let mut macs = 0;
        for (xi, f) in x.iter().zip(&self.x) {
            if *xi != 0.0 {
                messages += 1;
                macs += f;
            }
        }
        for (vj, f) in v.iter().zip(&self.v) {
            if *vj != 0.0 {
                messages += 1;
                macs += f;
            }
        }
        (messages, macs)
    }
}

fn inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Runs `method` from `init` (cold start when `None`). When `frame` is given,
/// trace costs/violations and the returned solution refer to the original
/// problem; termination always uses the problem being iterated on.
pub fn run(
    problem: &QpProblem,
    method: Method,
    hp: &HyperParams,
    init: Option<SolverState>,
    frame: Option<&OriginalFrame>,
) -> Result<ReferenceRun> {
    let (l, m) = (problem.n_vars(), problem.n_constraints());
    let mut state = init.unwrap_or_else(|| SolverState::cold(problem, hp));
    for (what, expected, found) in [
        ("initial x", l, state.x.len()),
        ("initial v", m, state.v.len()),
        ("initial w", m, state.w.len()),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch {
                what: what.into(),
                expected,
                found,
            });
        }
    }
    let use_constraints = method != Method::Gd && m > 0;
    let fan = FanOut::new(problem, use_constraints);
    let schedule = Schedule::new(hp);
    let at = problem.a.transpose();

    let measure = |x: &[f64]| -> Result<(Vec<f64>, f64, f64)> {
        match frame {
            Some(f) => f.measure(x),
            None => {
                let c = problem.evaluate_cost(x)?;
                let (v, _) = problem.evaluate_violation(x)?;
                Ok((x.to_vec(), c, v))
            }
        }
    };

    let mut trace = ConvergenceTrace::default();
    let (_, c0, viol0) = measure(&state.x)?;
    trace.records.push(TraceRecord {
        iter: 0,
        cost: c0,
        violation: viol0,
        messages: 0,
        mac_ops: 0,
        saturations: 0,
    });
    if hp.snapshot_every > 0 {
        trace.snapshots.push((0, state.x.clone()));
    }

    let mut qx = vec![0.0; l];
    let mut ax = vec![0.0; m];
    let mut atv = vec![0.0; l];
    let mut prev_cost = problem.evaluate_cost(&state.x)?;
    let mut converged = false;
    let mut executed = 0;

    while executed < hp.max_iters {
        let (alpha, beta) = (state.alpha, state.beta);
        let (messages, macs);
        let x_prev = state.x.clone();
        let v_prev = state.v.clone();
        match method {
            Method::Gd | Method::Gdcc => {
                // the correction uses the relu-gated residual of the current x
                let gated = if use_constraints {
                    problem.a.spmv_into(&state.x, &mut ax);
                    let r: Vec<f64> = ax.iter().zip(&problem.k).map(|(a, k)| a - k).collect();
                    relu_gate(&r, &problem.senses)
                } else {
                    Vec::new()
                };
                (messages, macs) = fan.tally(&state.x, &gated);
                problem.q.spmv_into(&state.x, &mut qx);
                for i in 0..l {
                    state.x[i] = state.x[i] - alpha * (qx[i] + problem.p[i]);
                }
                if use_constraints {
                    at.spmv_into(&gated, &mut atv);
                    for i in 0..l {
                        state.x[i] -= beta * atv[i];
                    }
                    state.v = gated;
                }
                if let Some(b) = &problem.bounds {
                    b.project(&mut state.x);
                }
            }
            Method::Pipg => {
                // dual update from x_t, then primal update with that dual:
                // the same order the fixed-point network executes
                problem.a.spmv_into(&state.x, &mut ax);
                for j in 0..m {
                    state.w[j] += beta * (ax[j] - problem.k[j]);
                }
                state.v = relu_gate(&state.w, &problem.senses);
                (messages, macs) = fan.tally(&state.x, &state.v);
                problem.q.spmv_into(&state.x, &mut qx);
                at.spmv_into(&state.v, &mut atv);
                for i in 0..l {
                    state.x[i] -= alpha * (qx[i] + problem.p[i] + atv[i]);
                }
                if let Some(b) = &problem.bounds {
                    b.project(&mut state.x);
                }
            }
        }
        executed += 1;
        state.iter += 1;
        if !state.all_finite() {
            return Err(Error::Diverged {
                iteration: state.iter,
            });
        }
        schedule.advance(&mut state, executed);

        let (_, cost, violation) = measure(&state.x)?;
        trace.records.push(TraceRecord {
            iter: state.iter,
            cost,
            violation,
            messages,
            mac_ops: macs,
            saturations: 0,
        });
        if hp.snapshot_every > 0 && state.iter % hp.snapshot_every == 0 {
            trace.snapshots.push((state.iter, state.x.clone()));
        }

        converged = match method {
            Method::Gd | Method::Gdcc => inf_diff(&state.x, &x_prev) <= hp.conv_tol,
            Method::Pipg => {
                let native_cost = problem.evaluate_cost(&state.x)?;
                let (native_viol, _) = problem.evaluate_violation(&state.x)?;
                let delta = (native_cost - prev_cost).abs();
                prev_cost = native_cost;
                // a stalled primal with a still-moving dual is not converged
                let v_scale = 1.0 + state.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                delta <= hp.conv_tol * native_cost.abs().max(1e-12)
                    && native_viol <= hp.conv_tol
                    && inf_diff(&state.v, &v_prev) <= hp.conv_tol * v_scale
            }
        };
        if converged {
            break;
        }
    }

    let (x_out, cost, violation) = measure(&state.x)?;
    let solution = Solution {
        x: x_out,
        cost,
        violation,
        iterations: executed,
        converged,
    };
    Ok(ReferenceRun {
        solution,
        trace,
        state,
    })
}

pub fn solve_gd(problem: &QpProblem, hp: &HyperParams) -> Result<(Solution, ConvergenceTrace)> {
    run(problem, Method::Gd, hp, None, None).map(|r| (r.solution, r.trace))
}

pub fn solve_gdcc(problem: &QpProblem, hp: &HyperParams) -> Result<(Solution, ConvergenceTrace)> {
    run(problem, Method::Gdcc, hp, None, None).map(|r| (r.solution, r.trace))
}

pub fn solve_pipg(problem: &QpProblem, hp: &HyperParams) -> Result<(Solution, ConvergenceTrace)> {
    run(problem, Method::Pipg, hp, None, None).map(|r| (r.solution, r.trace))
}
