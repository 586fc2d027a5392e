//! Ruiz equilibration of the KKT pattern `[[Q, Aᵀ], [A, 0]]`.
//!
//! The scaled problem is `Q' = c·DQD`, `p' = c·Dp`, `A' = EAD`, `k' = Ek`,
//! with box bounds divided by `D`. A primal solution maps back as `x = D·x'`,
//! a dual solution as `v = E·v' / c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoxBounds, QpProblem, SparseMatrix};

pub const DEFAULT_MAX_ITERS: usize = 10;
pub const DEFAULT_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    /// Variable scaling (diagonal of D).
    pub d: Vec<f64>,
    /// Constraint-row scaling (diagonal of E).
    pub e: Vec<f64>,
    /// Cost scalar.
    pub c: f64,
    /// Ruiz sweeps actually applied.
    pub iterations: usize,
    /// Whether every nonzero KKT row norm ended within `tol` of 1. False means
    /// `max_iters` was hit first.
    pub converged: bool,
}

impl Scaling {
    pub fn identity(n_vars: usize, n_constraints: usize) -> Self {
        Self {
            d: vec![1.0; n_vars],
            e: vec![1.0; n_constraints],
            c: 1.0,
            iterations: 0,
            converged: true,
        }
    }

    /// Applies this scaling to `problem`.
    pub fn apply(&self, problem: &QpProblem) -> Result<QpProblem> {
        self.check_dims(problem)?;
        let cd: Vec<f64> = self.d.iter().map(|di| self.c * di).collect();
        let q = problem.q.scale(&self.d, &self.d).map_values(|_, _, v| self.c * v);
        let p = problem.p.iter().zip(&cd).map(|(pi, s)| pi * s).collect();
        let a = problem.a.scale(&self.e, &self.d);
        let k = problem.k.iter().zip(&self.e).map(|(ki, ei)| ki * ei).collect();
        let bounds = problem.bounds.as_ref().map(|b| {
            BoxBounds::new(
                b.lower.iter().zip(&self.d).map(|(l, d)| l / d).collect(),
                b.upper.iter().zip(&self.d).map(|(u, d)| u / d).collect(),
            )
        });
        Ok(QpProblem::new(q, p, a, k, problem.senses.clone(), bounds))
    }

    /// Inverse of [`Scaling::apply`].
    pub fn unapply(&self, scaled: &QpProblem) -> Result<QpProblem> {
        self.check_dims(scaled)?;
        let dinv: Vec<f64> = self.d.iter().map(|d| 1.0 / d).collect();
        let einv: Vec<f64> = self.e.iter().map(|e| 1.0 / e).collect();
        let q = scaled.q.scale(&dinv, &dinv).map_values(|_, _, v| v / self.c);
        let p = scaled.p.iter().zip(&dinv).map(|(pi, s)| pi * s / self.c).collect();
        let a = scaled.a.scale(&einv, &dinv);
        let k = scaled.k.iter().zip(&einv).map(|(ki, s)| ki * s).collect();
        let bounds = scaled.bounds.as_ref().map(|b| {
            BoxBounds::new(
                b.lower.iter().zip(&self.d).map(|(l, d)| l * d).collect(),
                b.upper.iter().zip(&self.d).map(|(u, d)| u * d).collect(),
            )
        });
        Ok(QpProblem::new(q, p, a, k, scaled.senses.clone(), bounds))
    }

    fn check_dims(&self, problem: &QpProblem) -> Result<()> {
        check_len("variable scaling", problem.n_vars(), self.d.len())?;
        check_len("constraint scaling", problem.n_constraints(), self.e.len())
    }

    /// `x = D·x'`.
    pub fn unscale_primal(&self, x_scaled: &[f64]) -> Result<Vec<f64>> {
        unscale_solution(x_scaled, self)
    }

    /// `x' = D⁻¹·x`.
    pub fn scale_primal(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("primal vector", self.d.len(), x.len())?;
        Ok(x.iter().zip(&self.d).map(|(xi, di)| xi / di).collect())
    }

    /// `v = E·v' / c`.
    pub fn unscale_dual(&self, v_scaled: &[f64]) -> Result<Vec<f64>> {
        check_len("dual vector", self.e.len(), v_scaled.len())?;
        Ok(v_scaled.iter().zip(&self.e).map(|(v, e)| v * e / self.c).collect())
    }

    /// `v' = c·E⁻¹·v`.
    pub fn scale_dual(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("dual vector", self.e.len(), v.len())?;
        Ok(v.iter().zip(&self.e).map(|(v, e)| self.c * v / e).collect())
    }
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// The original problem together with the scaling that produced the problem
/// actually being iterated on. Used to report costs and violations of scaled
/// iterates in the original coordinates.
#[derive(Debug, Clone)]
pub struct OriginalFrame {
    pub problem: QpProblem,
    pub scaling: Scaling,
}

impl OriginalFrame {
    pub fn new(problem: QpProblem, scaling: Scaling) -> Self {
        Self { problem, scaling }
    }

    /// Unscaled iterate with its original cost and violation norm.
    pub fn measure(&self, x_scaled: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        let x = self.scaling.unscale_primal(x_scaled)?;
        let cost = self.problem.evaluate_cost(&x)?;
        let (violation, _) = self.problem.evaluate_violation(&x)?;
        Ok((x, cost, violation))
    }
}

/// Returns `D·x_scaled`.
pub fn unscale_solution(x_scaled: &[f64], scaling: &Scaling) -> Result<Vec<f64>> {
    check_len("scaled solution", scaling.d.len(), x_scaled.len())?;
    Ok(x_scaled.iter().zip(&scaling.d).map(|(x, d)| x * d).collect())
}

/// Row infinity norms of the symmetric KKT matrix `[[Q, Aᵀ], [A, 0]]`, split
/// into the variable block (length L) and the constraint block (length M).
pub fn kkt_inf_norms(q: &SparseMatrix, a: &SparseMatrix) -> (Vec<f64>, Vec<f64>) {
    let var = q
        .col_inf_norms()
        .into_iter()
        .zip(a.col_inf_norms())
        .map(|(nq, na)| nq.max(na))
        .collect();
    (var, a.row_inf_norms())
}

fn within_tol(norms: &[f64], tol: f64) -> bool {
    norms.iter().all(|&n| n == 0.0 || (n - 1.0).abs() <= tol)
}

fn sweep_factor(norm: f64) -> f64 {
    if norm > 0.0 {
        1.0 / norm.sqrt()
    } else {
        1.0
    }
}

pub fn ruiz_equilibrate(
    problem: &QpProblem,
    max_iters: usize,
    tol: f64,
) -> Result<(QpProblem, Scaling)> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("ruiz max_iters must be at least 1".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!("ruiz tol {tol} outside (0, 1)")));
    }
    let (l, m) = (problem.n_vars(), problem.n_constraints());
    let mut d = vec![1.0; l];
    let mut e = vec![1.0; m];
    let mut q = problem.q.clone();
    let mut a = problem.a.clone();

    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (var_norms, con_norms) = kkt_inf_norms(&q, &a);
        if within_tol(&var_norms, tol) && within_tol(&con_norms, tol) {
            converged = true;
            break;
        }
        if iterations == max_iters {
            break;
        }
        let dd: Vec<f64> = var_norms.into_iter().map(sweep_factor).collect();
        let de: Vec<f64> = con_norms.into_iter().map(sweep_factor).collect();
        q = q.scale(&dd, &dd);
        a = a.scale(&de, &dd);
        d.iter_mut().zip(&dd).for_each(|(d, f)| *d *= f);
        e.iter_mut().zip(&de).for_each(|(e, f)| *e *= f);
        iterations += 1;
    }

    let mut scaling = Scaling {
        d,
        e,
        c: 1.0,
        iterations,
        converged,
    };
    scaling.c = cost_scalar(problem, &scaling);
    let scaled = scaling.apply(problem)?;
    Ok((scaled, scaling))
}

/// `1 / max(mean column inf-norm of DQD, ‖Dp‖∞)`, or 1 when both vanish.
fn cost_scalar(problem: &QpProblem, scaling: &Scaling) -> f64 {
    let l = problem.n_vars();
    if l == 0 {
        return 1.0;
    }
    let dqd = problem.q.scale(&scaling.d, &scaling.d);
    let mean_col = dqd.col_inf_norms().iter().sum::<f64>() / l as f64;
    let p_inf = problem
        .p
        .iter()
        .zip(&scaling.d)
        .fold(0.0f64, |mx, (p, d)| mx.max((p * d).abs()));
    let scale = mean_col.max(p_inf);
    if scale > 0.0 && scale.is_finite() {
        1.0 / scale
    } else {
        1.0
    }
}
