//! Test problems with a known optimum and an independent dense oracle.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use neuroqp::{QpProblem, Sense, SparseMatrix};

pub struct Constructed {
    pub problem: QpProblem,
    /// Rows holding with equality at the optimum (equality rows included).
    pub active: Vec<usize>,
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
}

#[derive(Clone, Copy)]
pub struct Shape {
    pub max_vars: usize,
    pub equalities: bool,
    /// Divide A by sqrt(L) so its spectral norm stays O(1).
    pub normalized_a: bool,
}

pub const SMALL: Shape = Shape {
    max_vars: 64,
    equalities: true,
    normalized_a: false,
};

pub fn to_sparse(d: &DMatrix<f64>) -> SparseMatrix {
    let rows: Vec<Vec<f64>> = (0..d.nrows()).map(|r| d.row(r).iter().copied().collect()).collect();
    SparseMatrix::from_dense(&rows).unwrap()
}

pub fn to_dense(m: &SparseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.n_rows(), m.n_cols(), |r, c| m.get(r, c))
}

/// A random feasible QP whose optimum is fixed by construction: pick x*, an
/// active set and nonnegative multipliers, then choose p and k so the KKT
/// conditions hold there. Q is positive definite, so x* is unique.
pub fn constructed_problem(seed: u64, shape: Shape) -> Constructed {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let l = rng.random_range(4..=shape.max_vars);
    let m = rng.random_range(1..=l);
    let n_eq = if shape.equalities { rng.random_range(0..=l / 4).min(m) } else { 0 };
    let n_active_ineq = rng.random_range(0..=(l / 2 - n_eq).min(m - n_eq));

    let gm = DMatrix::from_fn(l, l, |_, _| g(&mut rng));
    let q = (gm.transpose() * &gm) / l as f64 + DMatrix::identity(l, l) * 0.1;
    let a_scale = if shape.normalized_a { 1.0 / (l as f64).sqrt() } else { 1.0 };
    let a = DMatrix::from_fn(m, l, |_, _| g(&mut rng) * a_scale);
    let x = DVector::from_fn(l, |_, _| g(&mut rng));
    let mut lambda = DVector::zeros(m);
    let ax = &a * &x;
    let mut k = vec![0.0; m];
    let mut senses = vec![Sense::Ineq; m];
    let mut active = Vec::new();
    for j in 0..m {
        if j < n_eq {
            senses[j] = Sense::Eq;
            lambda[j] = g(&mut rng);
            k[j] = ax[j];
            active.push(j);
        } else if j < n_eq + n_active_ineq {
            lambda[j] = rng.random_range(0.5..2.0);
            k[j] = ax[j];
            active.push(j);
        } else {
            k[j] = ax[j] + rng.random_range(0.1..1.0);
        }
    }
    let p = -(&q * &x) - a.transpose() * &lambda;
    let problem = QpProblem::new(to_sparse(&q), p.iter().copied().collect(), to_sparse(&a), k, senses, None);
    Constructed {
        problem,
        active,
        x_star: x.iter().copied().collect(),
        lambda_star: lambda.iter().copied().collect(),
    }
}

/// Solves the equality-constrained KKT system on the active set with a dense
/// LU and checks primal and dual feasibility of the result. Returns (x, f).
pub fn kkt_oracle(c: &Constructed) -> Option<(Vec<f64>, f64)> {
    let p = &c.problem;
    let (l, na) = (p.n_vars(), c.active.len());
    let mut kkt = DMatrix::zeros(l + na, l + na);
    let mut rhs = DVector::zeros(l + na);
    kkt.view_mut((0, 0), (l, l)).copy_from(&to_dense(&p.q));
    for i in 0..l {
        rhs[i] = -p.p[i];
    }
    for (r, &j) in c.active.iter().enumerate() {
        for i in 0..l {
            let v = p.a.get(j, i);
            kkt[(l + r, i)] = v;
            kkt[(i, l + r)] = v;
        }
        rhs[l + r] = p.k[j];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x: Vec<f64> = sol.rows(0, l).iter().copied().collect();
    for (r, &j) in c.active.iter().enumerate() {
        if p.senses[j] == Sense::Ineq && sol[l + r] < -1e-8 {
            return None;
        }
    }
    let (viol, _) = p.evaluate_violation(&x).ok()?;
    if viol > 1e-8 {
        return None;
    }
    let f = p.evaluate_cost(&x).ok()?;
    Some((x, f))
}
