//! The two-layer event-based network in fixed point.
//!
//! Gradient neurons hold `x` (one per variable); constraint neurons hold the
//! integral state `w` and its gated output `v` (one per constraint row). A
//! neuron broadcasts its state only when `|state| > event_threshold` raw
//! units; receivers accumulate weighted inputs exactly and round once.
//!
//! One [`Network::step`] is a synchronous iteration:
//!
//! 1. gradient neurons emit `x`;
//! 2. constraint neurons receive `A·x`, update `w += β(Ax − k)`, `v = relu_gate(w)`;
//! 3. constraint neurons emit `v`;
//! 4. gradient neurons receive `Q·x` and `Aᵀ·v`, update
//!    `x ← π(x − α(Qx + p + Aᵀv))`;
//! 5. α is halved / β doubled on their schedules.

mod partition;

pub use partition::{sync_overhead, PartitionReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fxp::{
    fxp_spmv_into, quantize_matrix, quantize_vector, round_shift_right, shift_halve, FxpFormat,
    FxpTensor, QuantizedMatrix,
};
use crate::precond::OriginalFrame;
use crate::problem::{QpProblem, Sense, Solution, SparseMatrix};
use crate::reference::{ConvergenceTrace, HyperParams, TraceRecord, BETA_CAP_FACTOR};

pub const DEFAULT_C_SYNC: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub state_fmt: FxpFormat,
    pub weight_bits: u32,
    /// Halve α every this many steps; 0 disables.
    pub alpha_decay_period: usize,
    /// Double β every this many steps; 0 disables.
    pub beta_growth_period: usize,
    pub max_iters: usize,
    pub neurons_per_core: usize,
    /// A state is broadcast only if `|raw| > event_threshold`.
    pub event_threshold: u64,
    /// Work units per `log2(n_cores)` of synchronization.
    pub c_sync: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            state_fmt: FxpFormat::DEFAULT_STATE,
            weight_bits: 8,
            alpha_decay_period: 100,
            beta_growth_period: 100,
            max_iters: 500,
            neurons_per_core: 1024,
            event_threshold: 0,
            c_sync: DEFAULT_C_SYNC,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons_per_core == 0 {
            return Err(Error::InvalidArgument("neurons_per_core must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(2..=32).contains(&self.weight_bits) {
            return Err(Error::InvalidArgument(format!(
                "weight_bits must be in 2..=32, got {}",
                self.weight_bits
            )));
        }
        Ok(())
    }

    /// Takes the schedule periods from `hp`.
    pub fn with_schedule_of(mut self, hp: &HyperParams) -> Self {
        self.alpha_decay_period = hp.alpha_decay_period;
        self.beta_growth_period = hp.beta_growth_period;
        self
    }
}

/// Counters for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvents {
    pub iter: usize,
    pub messages: u64,
    pub mac_ops: u64,
    pub neuron_updates: u64,
    pub saturations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStats {
    pub messages_sent: u64,
    pub mac_ops: u64,
    pub neuron_updates: u64,
    pub saturations: u64,
    pub per_iteration: Vec<StepEvents>,
}

impl EventStats {
    fn add(&mut self, ev: StepEvents) {
        self.messages_sent += ev.messages;
        self.mac_ops += ev.mac_ops;
        self.neuron_updates += ev.neuron_updates;
        self.saturations += ev.saturations;
        self.per_iteration.push(ev);
    }
}

/// A step-size scalar stored in the state width with its own binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftScalar {
    pub raw: i64,
    pub frac_bits: u32,
}

impl ShiftScalar {
    /// Places the binary point so that `headroom·value` still fits in `width` bits.
    fn quantize(value: f64, headroom: f64, width: u32) -> Self {
        let max_raw = ((1u64 << (width - 1)) - 1) as f64;
        let frac_bits = if value > 0.0 {
            (max_raw / (value * headroom)).log2().floor().clamp(0.0, 62.0) as u32
        } else {
            0
        };
        let raw = (value * (frac_bits as f64).exp2()).round_ties_even().min(max_raw) as i64;
        Self { raw, frac_bits }
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * (-(self.frac_bits as f64)).exp2()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    problem: QpProblem,
    frame: Option<OriginalFrame>,
    q: QuantizedMatrix,
    a: QuantizedMatrix,
    at: QuantizedMatrix,
    p: FxpTensor,
    k: FxpTensor,
    senses: Vec<Sense>,
    bounds: Option<(Vec<i64>, Vec<i64>)>,
    alpha0: ShiftScalar,
    beta0: ShiftScalar,
    alpha: ShiftScalar,
    beta: ShiftScalar,
    beta_cap_raw: i64,
    x: FxpTensor,
    w: FxpTensor,
    v: FxpTensor,
    iter: usize,
    stats: EventStats,
    /// MACs received per neuron, gradient neurons first.
    received: Vec<u64>,
    /// Bias quantization saturations, reported with the first step.
    build_saturations: u64,
    q_fan: Vec<u64>,
    a_fan: Vec<u64>,
    at_fan: Vec<u64>,
}

fn check_collapse(m: &SparseMatrix, name: &'static str, cfg: &NetworkConfig) -> Result<QuantizedMatrix> {
    let qm = quantize_matrix(m, cfg.weight_bits)?;
    let below_ulp = m.max_abs() < cfg.state_fmt.resolution() / 2.0;
    if m.nnz() > 0 && (qm.nnz() == 0 || below_ulp) {
        return Err(Error::QuantizationUnderflow {
            matrix: name,
            weight_bits: cfg.weight_bits,
        });
    }
    Ok(qm)
}

fn fan_out(m: &QuantizedMatrix) -> Vec<u64> {
    m.col_nnz().into_iter().map(|c| c as u64).collect()
}

/// Builds the network for `problem` (already preconditioned if desired).
/// Schedule periods come from `cfg`; step sizes from `hp`.
pub fn build_network(problem: &QpProblem, hp: &HyperParams, cfg: &NetworkConfig) -> Result<Network> {
    cfg.validate()?;
    problem.validate().into_result()?;
    if !(hp.alpha0 > 0.0 && hp.beta0 > 0.0) {
        return Err(Error::InvalidArgument("alpha0 and beta0 must be positive".into()));
    }
    let fmt = cfg.state_fmt;
    let q = check_collapse(&problem.q, "Q", cfg)?;
    let a = check_collapse(&problem.a, "A", cfg)?;
    let at = a.transpose();
    let (p, sp) = quantize_vector(&problem.p, fmt);
    let (k, sk) = quantize_vector(&problem.k, fmt);
    let bounds = problem.bounds.as_ref().map(|b| {
        let lo = b.lower.iter().map(|&l| fmt.quantize(l).0).collect();
        let hi = b.upper.iter().map(|&u| fmt.quantize(u).0).collect();
        (lo, hi)
    });
    let width = fmt.total_bits();
    let alpha0 = ShiftScalar::quantize(hp.alpha0, 1.0, width);
    let beta0 = ShiftScalar::quantize(hp.beta0, BETA_CAP_FACTOR, width);
    let beta_cap_raw = (beta0.raw as f64 * BETA_CAP_FACTOR) as i64;
    let (l, m) = (problem.n_vars(), problem.n_constraints());
    Ok(Network {
        cfg: cfg.clone(),
        problem: problem.clone(),
        frame: None,
        q_fan: fan_out(&q),
        a_fan: fan_out(&a),
        at_fan: fan_out(&at),
        q,
        a,
        at,
        p,
        k,
        senses: problem.senses.clone(),
        bounds,
        alpha0,
        beta0,
        alpha: alpha0,
        beta: beta0,
        beta_cap_raw,
        x: FxpTensor::zeros(l, fmt),
        w: FxpTensor::zeros(m, fmt),
        v: FxpTensor::zeros(m, fmt),
        iter: 0,
        stats: EventStats::default(),
        received: vec![0; l + m],
        build_saturations: sp + sk,
    })
}

impl Network {
    /// Reports costs and solutions in the frame's original coordinates.
    pub fn with_frame(mut self, frame: OriginalFrame) -> Self {
        self.frame = Some(frame);
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn n_gradient_neurons(&self) -> usize {
        self.problem.n_vars()
    }

    pub fn n_constraint_neurons(&self) -> usize {
        self.problem.n_constraints()
    }

    pub fn n_neurons(&self) -> usize {
        self.n_gradient_neurons() + self.n_constraint_neurons()
    }

    /// Q, A and Aᵀ.
    pub fn weight_matrices(&self) -> [&QuantizedMatrix; 3] {
        [&self.q, &self.a, &self.at]
    }

    pub fn alpha(&self) -> ShiftScalar {
        self.alpha
    }

    pub fn beta(&self) -> ShiftScalar {
        self.beta
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn stats(&self) -> &EventStats {
        &self.stats
    }

    /// MACs received so far by each neuron (gradient neurons first).
    pub fn received_macs(&self) -> &[u64] {
        &self.received
    }

    pub fn x(&self) -> &FxpTensor {
        &self.x
    }

    pub fn v(&self) -> &FxpTensor {
        &self.v
    }

    pub fn w(&self) -> &FxpTensor {
        &self.w
    }

    /// Fan-out of every gradient neuron and every constraint neuron, in that order.
    pub fn fan_out(&self) -> Vec<u64> {
        let mut f: Vec<u64> = self.q_fan.iter().zip(&self.a_fan).map(|(q, a)| q + a).collect();
        f.extend_from_slice(&self.at_fan);
        f
    }

    /// Dequantized primal state in the iterated problem's coordinates.
    pub fn x_scaled(&self) -> Vec<f64> {
        self.x.dequantize()
    }

    pub fn v_scaled(&self) -> Vec<f64> {
        self.v.dequantize()
    }

    pub fn w_scaled(&self) -> Vec<f64> {
        self.w.dequantize()
    }

    fn emits(&self, raw: i64) -> bool {
        raw.unsigned_abs() > self.cfg.event_threshold
    }

    fn emitted(&self, t: &FxpTensor) -> (FxpTensor, u64) {
        let mut count = 0;
        let raw = t
            .raw
            .iter()
            .map(|&r| {
                if self.emits(r) {
                    count += 1;
                    r
                } else {
                    0
                }
            })
            .collect();
        (
            FxpTensor {
                raw,
                format: t.format,
            },
            count,
        )
    }

    /// One synchronous iteration; returns its counters.
    pub fn step(&mut self) -> StepEvents {
        let fmt = self.cfg.state_fmt;
        let (l, m) = (self.n_gradient_neurons(), self.n_constraint_neurons());
        let mut ev = StepEvents {
            iter: self.iter + 1,
            neuron_updates: (l + m) as u64,
            saturations: std::mem::take(&mut self.build_saturations),
            ..StepEvents::default()
        };

        // (1) gradient neurons emit
        let (x_msg, nx) = self.emitted(&self.x);
        ev.messages += nx;

        // (2) constraint neurons integrate
        if m > 0 {
            let mut ax = FxpTensor::zeros(m, fmt);
            let st = fxp_spmv_into(&self.a, &x_msg, &mut ax, Some(&mut self.received[l..]));
            ev.mac_ops += st.macs;
            ev.saturations += st.saturations;
            for j in 0..m {
                let r = ax.raw[j] as i128 - self.k.raw[j] as i128;
                let inc = round_shift_right(self.beta.raw as i128 * r, self.beta.frac_bits);
                let (w, s) = fmt.saturate(self.w.raw[j] as i128 + inc);
                self.w.raw[j] = w;
                ev.saturations += s as u64;
                self.v.raw[j] = match self.senses[j] {
                    Sense::Ineq => w.max(0),
                    Sense::Eq => w,
                };
            }
        }

        // (3) constraint neurons emit
        let (v_msg, nv) = self.emitted(&self.v);
        ev.messages += nv;

        // (4) gradient neurons descend
        let mut qx = FxpTensor::zeros(l, fmt);
        let st = fxp_spmv_into(&self.q, &x_msg, &mut qx, Some(&mut self.received[..l]));
        ev.mac_ops += st.macs;
        ev.saturations += st.saturations;
        let mut atv = FxpTensor::zeros(l, fmt);
        if m > 0 {
            let st = fxp_spmv_into(&self.at, &v_msg, &mut atv, Some(&mut self.received[..l]));
            ev.mac_ops += st.macs;
            ev.saturations += st.saturations;
        }
        for i in 0..l {
            let g = qx.raw[i] as i128 + self.p.raw[i] as i128 + atv.raw[i] as i128;
            let delta = round_shift_right(self.alpha.raw as i128 * g, self.alpha.frac_bits);
            let (mut xi, s) = fmt.saturate(self.x.raw[i] as i128 - delta);
            ev.saturations += s as u64;
            if let Some((lo, hi)) = &self.bounds {
                xi = xi.clamp(lo[i], hi[i]);
            }
            self.x.raw[i] = xi;
        }

        // (5) shift schedule
        self.iter += 1;
        let (pa, pb) = (self.cfg.alpha_decay_period, self.cfg.beta_growth_period);
        if pa > 0 && self.iter % pa == 0 {
            self.alpha.raw = shift_halve(self.alpha.raw);
        }
        if pb > 0 && self.iter % pb == 0 {
            let (b, s) = fmt.saturate((self.beta.raw as i128) << 1);
            self.beta.raw = b.min(self.beta_cap_raw);
            ev.saturations += s as u64;
        }

        self.stats.add(ev);
        ev
    }

    fn measure(&self) -> Result<(Vec<f64>, f64, f64)> {
        let xs = self.x_scaled();
        match &self.frame {
            Some(f) => f.measure(&xs),
            None => {
                let c = self.problem.evaluate_cost(&xs)?;
                let (v, _) = self.problem.evaluate_violation(&xs)?;
                Ok((xs, c, v))
            }
        }
    }

    /// Runs up to `budget` steps, stopping early once α has shifted down to
    /// zero and a step leaves x unchanged.
    pub fn solve(&mut self, budget: usize) -> Result<(Solution, ConvergenceTrace, EventStats)> {
        if budget == 0 {
            return Err(Error::InvalidArgument("iteration budget must be at least 1".into()));
        }
        let mut trace = ConvergenceTrace::default();
        let (_, c0, v0) = self.measure()?;
        trace.records.push(TraceRecord {
            iter: self.iter,
            cost: c0,
            violation: v0,
            messages: 0,
            mac_ops: 0,
            saturations: 0,
        });
        let start_stats = self.stats.per_iteration.len();
        let mut converged = false;
        for _ in 0..budget {
            let before = self.x.raw.clone();
            let alpha_was_zero = self.alpha.raw == 0;
            let ev = self.step();
            let (_, cost, violation) = self.measure()?;
            trace.records.push(TraceRecord {
                iter: ev.iter,
                cost,
                violation,
                messages: ev.messages,
                mac_ops: ev.mac_ops,
                saturations: ev.saturations,
            });
            if alpha_was_zero && before == self.x.raw {
                converged = true;
                break;
            }
        }
        let steps = trace.records.len() - 1;
        let (x, cost, violation) = self.measure()?;
        let mut run_stats = EventStats::default();
        for ev in &self.stats.per_iteration[start_stats..] {
            run_stats.add(*ev);
        }
        let solution = Solution {
            x,
            cost,
            violation,
            iterations: steps,
            converged,
        };
        Ok((solution, trace, run_stats))
    }

    /// Installs initial states (iterated-problem coordinates) and resets the
    /// schedule and counters. A missing `w0` defaults to `v0`, a missing `v0`
    /// to zero.
    pub fn warm_start(&mut self, x0: &[f64], v0: Option<&[f64]>, w0: Option<&[f64]>) -> Result<()> {
        let (l, m) = (self.n_gradient_neurons(), self.n_constraint_neurons());
        let check = |what: &str, expected: usize, found: usize| {
            if expected != found {
                Err(Error::DimensionMismatch {
                    what: what.into(),
                    expected,
                    found,
                })
            } else {
                Ok(())
            }
        };
        check("warm-start x", l, x0.len())?;
        if let Some(v) = v0 {
            check("warm-start v", m, v.len())?;
        }
        if let Some(w) = w0 {
            check("warm-start w", m, w.len())?;
        }
        let fmt = self.cfg.state_fmt;
        self.reset();
        let (mut x, sx) = quantize_vector(x0, fmt);
        if let Some((lo, hi)) = &self.bounds {
            for (i, xi) in x.raw.iter_mut().enumerate() {
                *xi = (*xi).clamp(lo[i], hi[i]);
            }
        }
        self.x = x;
        let zeros = vec![0.0; m];
        let w_src = w0.or(v0).unwrap_or(&zeros);
        let (w, sw) = quantize_vector(w_src, fmt);
        self.v.raw = w
            .raw
            .iter()
            .zip(&self.senses)
            .map(|(&r, s)| if *s == Sense::Ineq { r.max(0) } else { r })
            .collect();
        self.w = w;
        self.build_saturations += sx + sw;
        Ok(())
    }

    /// Zero state, initial step sizes, cleared counters.
    pub fn reset(&mut self) {
        let fmt = self.cfg.state_fmt;
        self.x = FxpTensor::zeros(self.n_gradient_neurons(), fmt);
        self.w = FxpTensor::zeros(self.n_constraint_neurons(), fmt);
        self.v = FxpTensor::zeros(self.n_constraint_neurons(), fmt);
        self.alpha = self.alpha0;
        self.beta = self.beta0;
        self.iter = 0;
        self.stats = EventStats::default();
        self.received.iter_mut().for_each(|r| *r = 0);
    }

    /// Analytic multi-core cost for the work measured so far.
    pub fn partition(&self, neurons_per_core: usize) -> Result<PartitionReport> {
        partition::partition(self, neurons_per_core)
    }

    /// Sum over this run's messages of the sender's fan-out.
    pub fn expected_macs(&self, x_emitted: &[bool], v_emitted: &[bool]) -> u64 {
        let xs: u64 = x_emitted
            .iter()
            .zip(self.q_fan.iter().zip(&self.a_fan))
            .filter(|(e, _)| **e)
            .map(|(_, (q, a))| q + a)
            .sum();
        let vs: u64 = v_emitted
            .iter()
            .zip(&self.at_fan)
            .filter(|(e, _)| **e)
            .map(|(_, f)| f)
            .sum();
        xs + vs
    }

    /// Which neurons would broadcast in the next step: gradient neurons from
    /// the current x; constraint neurons are only known after the step.
    pub fn x_emitters(&self) -> Vec<bool> {
        self.x.raw.iter().map(|&r| self.emits(r)).collect()
    }

    pub fn v_emitters(&self) -> Vec<bool> {
        self.v.raw.iter().map(|&r| self.emits(r)).collect()
    }
}
