//! Multi-stage MPC problems with a block-sparse layout.
//!
//! The decision vector is `z = (x₀, u₀, x₁, u₁, …, x_{N−1}, u_{N−1}, x_N)`.
//! Q is block diagonal with one `[[S, Kᵀ], [K, T]]` block per stage and a
//! terminal state block. A holds `x₀ = x_init` followed by, for every stage,
//! `−E_j·x_j − F_j·u_j + x_{j+1} = c_j`; every row is an equality.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{QpProblem, Sense, SparseMatrix};

pub const DEFAULT_STATES: usize = 24;
pub const DEFAULT_CONTROLS: usize = 24;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Scale of the control-input matrix F.
pub const INPUT_GAIN: f64 = 0.1;
/// Standard deviation of the affine dynamics terms.
pub const AFFINE_STD: f64 = 0.1;

/// Everything needed to regenerate a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_states: usize,
    pub n_controls: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl GeneratorSpec {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            n_states: DEFAULT_STATES,
            n_controls: DEFAULT_CONTROLS,
            horizon,
            seed,
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_dims(mut self, n_states: usize, n_controls: usize) -> Self {
        self.n_states = n_states;
        self.n_controls = n_controls;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// States × states.
    pub s: DMatrix<f64>,
    /// Controls × states.
    pub k: DMatrix<f64>,
    /// Controls × controls.
    pub t: DMatrix<f64>,
    pub q_x: DVector<f64>,
    pub q_u: DVector<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl Stage {
    /// `[[S, Kᵀ], [K, T]]`.
    pub fn cost_block(&self) -> DMatrix<f64> {
        let (ns, nc) = (self.s.nrows(), self.t.nrows());
        let mut h = DMatrix::zeros(ns + nc, ns + nc);
        h.view_mut((0, 0), (ns, ns)).copy_from(&self.s);
        h.view_mut((ns, 0), (nc, ns)).copy_from(&self.k);
        h.view_mut((0, ns), (ns, nc)).copy_from(&self.k.transpose());
        h.view_mut((ns, ns), (nc, nc)).copy_from(&self.t);
        h
    }

    fn set_cost_block(&mut self, h: &DMatrix<f64>) {
        let (ns, nc) = (self.s.nrows(), self.t.nrows());
        self.s.copy_from(&h.view((0, 0), (ns, ns)));
        self.k.copy_from(&h.view((ns, 0), (nc, ns)));
        self.t.copy_from(&h.view((ns, ns), (nc, nc)));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub n_states: usize,
    pub n_controls: usize,
    pub stages: Vec<Stage>,
    pub terminal: DMatrix<f64>,
    pub q_terminal: DVector<f64>,
    pub x_init: DVector<f64>,
    pub spec: GeneratorSpec,
}

impl StageModel {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Largest over smallest eigenvalue of Q (the union of its block spectra).
    pub fn q_condition(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let blocks = self.stages.iter().map(Stage::cost_block).chain([self.terminal.clone()]);
        for b in blocks {
            for &ev in SymmetricEigen::new(b).eigenvalues.iter() {
                lo = lo.min(ev);
                hi = hi.max(ev);
            }
        }
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    /// Stage-`j` offset of `x_j` in z.
    pub fn state_offset(&self, j: usize) -> usize {
        j * (self.n_states + self.n_controls)
    }

    /// The point reached by applying zero controls from `x_init`.
    pub fn rollout(&self) -> Vec<f64> {
        let (ns, nc) = (self.n_states, self.n_controls);
        let mut z = vec![0.0; (self.horizon() + 1) * ns + self.horizon() * nc];
        let mut x = self.x_init.clone();
        for (j, st) in self.stages.iter().enumerate() {
            let off = self.state_offset(j);
            z[off..off + ns].copy_from_slice(x.as_slice());
            x = &st.e * &x + &st.c;
        }
        let off = self.state_offset(self.horizon());
        z[off..off + ns].copy_from_slice(x.as_slice());
        z
    }
}

/// Neuron and synapse counts for a tiled problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceCount {
    /// Gradient neurons, `(N+1)·n_s + N·n_c`.
    pub n_neurons_decision: usize,
    /// Adds `(N+1)·n_s` constraint neurons.
    pub n_neurons_total: usize,
    /// `n_s(2n_s + n_c)N + (n_s + n_c)²N + n_s²`.
    pub n_synapses: usize,
}

pub fn count_resources(n_states: usize, n_controls: usize, horizon: usize) -> Result<ResourceCount> {
    if n_states == 0 || n_controls == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(format!(
            "resource counts need positive sizes, got states {n_states}, controls {n_controls}, horizon {horizon}"
        )));
    }
    let (ns, nc, n) = (n_states, n_controls, horizon);
    let decision = (n + 1) * ns + n * nc;
    Ok(ResourceCount {
        n_neurons_decision: decision,
        n_neurons_total: decision + (n + 1) * ns,
        n_synapses: ns * (2 * ns + nc) * n + (ns + nc).pow(2) * n + ns * ns,
    })
}

fn push_dense(t: &mut Vec<(usize, usize, f64)>, m: &DMatrix<f64>, r0: usize, c0: usize, sign: f64) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != 0.0 {
                t.push((r0 + r, c0 + c, sign * v));
            }
        }
    }
}

pub fn tile(model: &StageModel) -> QpProblem {
    let (ns, nc, n) = (model.n_states, model.n_controls, model.horizon());
    let l = (n + 1) * ns + n * nc;
    let m = (n + 1) * ns;
    let mut qt = Vec::new();
    let mut at = Vec::new();
    let mut p = vec![0.0; l];
    let mut k = vec![0.0; m];

    for i in 0..ns {
        at.push((i, i, 1.0));
        k[i] = model.x_init[i];
    }
    for (j, st) in model.stages.iter().enumerate() {
        let off = model.state_offset(j);
        push_dense(&mut qt, &st.cost_block(), off, off, 1.0);
        p[off..off + ns].copy_from_slice(st.q_x.as_slice());
        p[off + ns..off + ns + nc].copy_from_slice(st.q_u.as_slice());
        let row = (j + 1) * ns;
        push_dense(&mut at, &st.e, row, off, -1.0);
        push_dense(&mut at, &st.f, row, off + ns, -1.0);
        let next = model.state_offset(j + 1);
        for i in 0..ns {
            at.push((row + i, next + i, 1.0));
            k[row + i] = st.c[i];
        }
    }
    let off = model.state_offset(n);
    push_dense(&mut qt, &model.terminal, off, off, 1.0);
    p[off..off + ns].copy_from_slice(model.q_terminal.as_slice());

    let q = SparseMatrix::from_triplets(l, l, qt).expect("stage blocks lie inside Q");
    let a = SparseMatrix::from_triplets(m, l, at).expect("dynamics rows lie inside A");
    QpProblem::new(q, p, a, k, vec![Sense::Eq; m], None)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// `B·Bᵀ + εI` with `B` of size r×2r and entries of variance `1/(2r)`.
fn random_psd(rng: &mut ChaCha8Rng, r: usize, eps: f64) -> DMatrix<f64> {
    let b = gaussian(rng, r, 2 * r, (1.0 / (2 * r) as f64).sqrt());
    symmetrize(&(&b * b.transpose())) + DMatrix::identity(r, r) * eps
}

pub fn generate_random(spec: &GeneratorSpec) -> Result<StageModel> {
    let (ns, nc, n) = (spec.n_states, spec.n_controls, spec.horizon);
    if ns == 0 || nc == 0 || n == 0 {
        return Err(Error::InvalidArgument("generator sizes must be positive".into()));
    }
    if !(spec.epsilon > 0.0) || !(spec.delta >= 0.0) {
        return Err(Error::InvalidArgument("generator needs epsilon > 0 and delta >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eye_sc = DMatrix::from_fn(ns, nc, |r, c| if r == c { 1.0 } else { 0.0 });
    let stages = (0..n)
        .map(|_| {
            let h = random_psd(&mut rng, ns + nc, spec.epsilon);
            // skew-symmetric drift keeps the zero-input rollout bounded over long horizons
            let g = gaussian(&mut rng, ns, ns, (1.0 / ns as f64).sqrt());
            let r = (&g - g.transpose()) * std::f64::consts::FRAC_1_SQRT_2;
            let e = DMatrix::identity(ns, ns) + r * spec.delta;
            let f = (&eye_sc + gaussian(&mut rng, ns, nc, (1.0 / nc as f64).sqrt())) * INPUT_GAIN;
            let mut st = Stage {
                s: DMatrix::zeros(ns, ns),
                k: DMatrix::zeros(nc, ns),
                t: DMatrix::zeros(nc, nc),
                q_x: gaussian_vec(&mut rng, ns, 1.0),
                q_u: gaussian_vec(&mut rng, nc, 1.0),
                e,
                f,
                c: gaussian_vec(&mut rng, ns, AFFINE_STD),
            };
            st.set_cost_block(&h);
            st
        })
        .collect();
    let terminal = random_psd(&mut rng, ns, spec.epsilon);
    let q_terminal = gaussian_vec(&mut rng, ns, 1.0);
    let x_init = gaussian_vec(&mut rng, ns, 1.0);
    Ok(StageModel {
        n_states: ns,
        n_controls: nc,
        stages,
        terminal,
        q_terminal,
        x_init,
        spec: spec.clone(),
    })
}

/// Convenience: generate and tile.
pub fn generate_problem(spec: &GeneratorSpec) -> Result<QpProblem> {
    generate_random(spec).map(|m| tile(&m))
}

/// Eigenvalues below `eps` are raised to `eps`.
fn clip_psd(h: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(h));
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return symmetrize(h);
    }
    let vals = eig.eigenvalues.map(|l| l.max(eps));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose()))
}

fn jitter(m: &mut DMatrix<f64>, rng: &mut ChaCha8Rng, magnitude: f64) {
    for v in m.iter_mut() {
        let xi: f64 = rng.random_range(-1.0..=1.0);
        if *v != 0.0 {
            *v *= 1.0 + magnitude * xi;
        }
    }
}

/// Multiplies every nonzero matrix entry by `1 + magnitude·ξ`, `ξ ~ U[−1, 1]`,
/// then re-symmetrizes the cost blocks and clips their spectra at ε.
pub fn perturb(model: &StageModel, magnitude: f64, seed: u64) -> Result<StageModel> {
    if !(magnitude >= 0.0) {
        return Err(Error::InvalidArgument(format!("perturbation magnitude {magnitude} is negative")));
    }
    if magnitude == 0.0 {
        return Ok(model.clone());
    }
    let eps = model.spec.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = model.clone();
    for st in &mut out.stages {
        let mut h = st.cost_block();
        jitter(&mut h, &mut rng, magnitude);
        st.set_cost_block(&clip_psd(&h, eps));
        jitter(&mut st.e, &mut rng, magnitude);
        jitter(&mut st.f, &mut rng, magnitude);
    }
    jitter(&mut out.terminal, &mut rng, magnitude);
    out.terminal = clip_psd(&out.terminal, eps);
    Ok(out)
}

/// Row of the generate manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub spec: GeneratorSpec,
    #[serde(rename = "L")]
    pub n_vars: usize,
    #[serde(rename = "M")]
    pub n_constraints: usize,
    pub nnz_q: usize,
    pub nnz_a: usize,
    pub resources: ResourceCount,
    pub q_condition: f64,
}

impl ManifestEntry {
    pub fn describe(file: String, model: &StageModel, problem: &QpProblem) -> Result<Self> {
        Ok(Self {
            file,
            spec: model.spec.clone(),
            n_vars: problem.n_vars(),
            n_constraints: problem.n_constraints(),
            nnz_q: problem.q.nnz(),
            nnz_a: problem.a.nnz(),
            resources: count_resources(model.n_states, model.n_controls, model.horizon())?,
            q_condition: model.q_condition(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StageModel {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        StageModel {
            n_states: 1,
            n_controls: 1,
            stages: vec![Stage {
                s: one(1.0),
                k: one(0.0),
                t: one(1.0),
                q_x: DVector::from_element(1, 0.0),
                q_u: DVector::from_element(1, 0.0),
                e: one(1.0),
                f: one(1.0),
                c: DVector::from_element(1, 0.0),
            }],
            terminal: one(1.0),
            q_terminal: DVector::from_element(1, 0.0),
            x_init: DVector::from_element(1, 2.0),
            spec: GeneratorSpec::new(1, 0).with_dims(1, 1),
        }
    }

    #[test]
    fn smallest_case_by_hand() {
        let p = tile(&tiny());
        assert_eq!((p.n_vars(), p.n_constraints()), (3, 2));
        assert_eq!(p.a.to_dense(), vec![vec![1.0, 0.0, 0.0], vec![-1.0, -1.0, 1.0]]);
        assert_eq!(p.k, vec![2.0, 0.0]);
        assert!(p.senses.iter().all(|s| *s == Sense::Eq));
    }

    #[test]
    fn resource_examples() {
        assert_eq!(count_resources(24, 24, 5).unwrap().n_neurons_decision, 264);
        let r = count_resources(24, 24, 100).unwrap();
        assert_eq!((r.n_neurons_decision, r.n_neurons_total), (4824, 7248));
        assert_eq!(r.n_synapses, 403_776);
        assert!(count_resources(0, 24, 5).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::new(3, 9);
        assert_eq!(generate_random(&spec).unwrap(), generate_random(&spec).unwrap());
        assert_ne!(
            generate_random(&spec).unwrap(),
            generate_random(&GeneratorSpec::new(3, 10)).unwrap()
        );
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let m = generate_random(&GeneratorSpec::new(2, 1)).unwrap();
        assert_eq!(perturb(&m, 0.0, 5).unwrap(), m);
        assert!(perturb(&m, -1.0, 5).is_err());
    }

    #[test]
    fn rollout_is_feasible() {
        let m = generate_random(&GeneratorSpec::new(20, 3)).unwrap();
        let p = tile(&m);
        let (viol, _) = p.evaluate_violation(&m.rollout()).unwrap();
        assert!(viol <= 1e-9, "{viol}");
    }
}
