//! Convex QP/LP model: minimize ½xᵀQx + pᵀx subject to Ax ≤ k (or = k per
//! row), optionally restricted to a per-variable box.

mod io;
mod sparse;

pub use io::{load_problem, problem_from_json, problem_to_json, save_problem, PROBLEM_FILE_VERSION};
pub use sparse::SparseMatrix;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative entrywise tolerance used for the symmetry check on Q.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative tolerance of the dense PSD check (scaled by the largest |eigenvalue|).
pub const PSD_TOL: f64 = 1e-7;
/// Above this many variables the dense PSD check is skipped.
pub const PSD_CHECK_MAX_DIM: usize = 512;

/// Constraint sense of one row of A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    /// `A_j x ≤ k_j`
    #[serde(rename = "ineq")]
    Ineq,
    /// `A_j x = k_j`
    #[serde(rename = "eq")]
    Eq,
}

/// Per-variable bounds defining the simple set the primal iterate is projected on.
/// Infinite entries mean "unbounded on that side".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    /// Clamps `x` into the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub q: SparseMatrix,
    pub p: Vec<f64>,
    pub a: SparseMatrix,
    pub k: Vec<f64>,
    pub senses: Vec<Sense>,
    pub bounds: Option<BoxBounds>,
}

impl QpProblem {
    /// Assembles a problem without checking it; call [`validate`] for that.
    pub fn new(
        q: SparseMatrix,
        p: Vec<f64>,
        a: SparseMatrix,
        k: Vec<f64>,
        senses: Vec<Sense>,
        bounds: Option<BoxBounds>,
    ) -> Self {
        Self {
            q,
            p,
            a,
            k,
            senses,
            bounds,
        }
    }

    /// Problem with no constraint rows.
    pub fn unconstrained(q: SparseMatrix, p: Vec<f64>) -> Self {
        let n = p.len();
        Self::new(q, p, SparseMatrix::zeros(0, n), Vec::new(), Vec::new(), None)
    }

    /// All-inequality constraints `A x ≤ k`.
    pub fn with_inequalities(q: SparseMatrix, p: Vec<f64>, a: SparseMatrix, k: Vec<f64>) -> Self {
        let senses = vec![Sense::Ineq; k.len()];
        Self::new(q, p, a, k, senses, None)
    }

    pub fn with_bounds(mut self, bounds: BoxBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// Number of decision variables L.
    pub fn n_vars(&self) -> usize {
        self.p.len()
    }

    /// Number of constraint rows M.
    pub fn n_constraints(&self) -> usize {
        self.k.len()
    }

    pub fn is_lp(&self) -> bool {
        self.q.nnz() == 0
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "decision vector".into(),
                expected: self.n_vars(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// ½xᵀQx + pᵀx.
    pub fn evaluate_cost(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        let qx = self.q.spmv(x)?;
        Ok(x.iter()
            .zip(&qx)
            .zip(&self.p)
            .map(|((xi, qxi), pi)| 0.5 * xi * qxi + pi * xi)
            .sum())
    }

    /// Per-row residuals (`max(r, 0)` on inequality rows, `|r|` on equality
    /// rows, with `r = A_j x − k_j`) and their L2 norm.
    pub fn evaluate_violation(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(x)?;
        let ax = self.a.spmv(x)?;
        let residuals: Vec<f64> = ax
            .iter()
            .zip(&self.k)
            .zip(&self.senses)
            .map(|((axj, kj), sense)| {
                let r = axj - kj;
                match sense {
                    Sense::Ineq => r.max(0.0),
                    Sense::Eq => r.abs(),
                }
            })
            .collect();
        let norm = residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
        Ok((norm, residuals))
    }

    /// Cost and violation bundled into a [`Solution`].
    pub fn solution(&self, x: Vec<f64>, iterations: usize, converged: bool) -> Result<Solution> {
        let cost = self.evaluate_cost(&x)?;
        let (violation, _) = self.evaluate_violation(&x)?;
        Ok(Solution {
            x,
            cost,
            violation,
            iterations,
            converged,
        })
    }

    /// Checks every structural invariant; never fails, only reports.
    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub cost: f64,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    DimensionMismatch,
    NotSymmetric,
    NotPsd,
    BoxInverted,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    /// Offending indices (rows, variables or matrix positions flattened as pairs).
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Set when L exceeds [`PSD_CHECK_MAX_DIM`] and the PSD test was not run.
    pub psd_check_skipped: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>, indices: Vec<usize>) {
        self.violations.push(Violation {
            kind,
            message: message.into(),
            indices,
        });
    }

    /// Turns a non-empty report into an error.
    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| v.message.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidProblem(msg))
    }
}

pub fn validate(problem: &QpProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let l = problem.p.len();
    let m = problem.k.len();

    let dims = [
        ("Q rows", problem.q.n_rows(), l),
        ("Q cols", problem.q.n_cols(), l),
        ("A cols", problem.a.n_cols(), l),
        ("A rows", problem.a.n_rows(), m),
        ("senses", problem.senses.len(), m),
    ];
    let mut dims_ok = true;
    for (what, found, expected) in dims {
        if found != expected {
            dims_ok = false;
            report.push(
                ViolationKind::DimensionMismatch,
                format!("dimension mismatch: {what} is {found}, expected {expected}"),
                vec![found, expected],
            );
        }
    }
    if let Some(b) = &problem.bounds {
        for (what, len) in [("box lower", b.lower.len()), ("box upper", b.upper.len())] {
            if len != l {
                dims_ok = false;
                report.push(
                    ViolationKind::DimensionMismatch,
                    format!("dimension mismatch: {what} has length {len}, expected {l}"),
                    vec![len, l],
                );
            }
        }
    }

    let non_finite: Vec<usize> = problem
        .p
        .iter()
        .chain(&problem.k)
        .chain(problem.q.values())
        .chain(problem.a.values())
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !non_finite.is_empty() {
        report.push(
            ViolationKind::NonFinite,
            "non-finite coefficient in Q, p, A or k",
            non_finite,
        );
    }

    let asym = problem.q.asymmetric_pairs(SYMMETRY_TOL);
    if !asym.is_empty() {
        report.push(
            ViolationKind::NotSymmetric,
            format!("Q not symmetric at {} entry pair(s)", asym.len()),
            asym.into_iter().flat_map(|(i, j)| [i, j]).collect(),
        );
    }

    if let Some(b) = &problem.bounds {
        let inverted: Vec<usize> = b
            .lower
            .iter()
            .zip(&b.upper)
            .enumerate()
            .filter(|(_, (lo, hi))| lo > hi || lo.is_nan() || hi.is_nan())
            .map(|(i, _)| i)
            .collect();
        if !inverted.is_empty() {
            report.push(
                ViolationKind::BoxInverted,
                "box lower bound exceeds upper bound",
                inverted,
            );
        }
    }

    let square = problem.q.n_rows() == problem.q.n_cols();
    if dims_ok && square && !report.has(ViolationKind::NonFinite) {
        if l > PSD_CHECK_MAX_DIM {
            report.psd_check_skipped = true;
        } else if let Some((min_eig, max_abs_eig)) = eigen_extremes_dense(&problem.q) {
            if min_eig < -PSD_TOL * max_abs_eig {
                report.push(
                    ViolationKind::NotPsd,
                    format!("Q not positive semidefinite (smallest eigenvalue {min_eig:.3e})"),
                    Vec::new(),
                );
            }
        }
    }
    report
}

/// Smallest eigenvalue and spectral radius of the symmetric part of a square
/// sparse matrix, via a dense eigendecomposition. `None` for an empty matrix.
pub fn eigen_extremes_dense(m: &SparseMatrix) -> Option<(f64, f64)> {
    let n = m.n_rows();
    if n == 0 {
        return None;
    }
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for (r, c, v) in m.iter() {
        dense[(r, c)] += 0.5 * v;
        dense[(c, r)] += 0.5 * v;
    }
    let eig = SymmetricEigen::new(dense);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let radius = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Some((min, radius))
}
