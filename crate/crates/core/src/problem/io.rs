//! Versioned JSON problem files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoxBounds, QpProblem, Sense, SparseMatrix};
use crate::error::{Error, Result};

pub const PROBLEM_FILE_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct TripletsFile {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Infinite bounds are written as `null`.
#[derive(Serialize, Deserialize)]
struct BoxFile {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    version: u64,
    #[serde(rename = "L")]
    n_vars: usize,
    #[serde(rename = "M")]
    n_constraints: usize,
    #[serde(rename = "Q")]
    q: TripletsFile,
    p: Vec<f64>,
    #[serde(rename = "A")]
    a: TripletsFile,
    k: Vec<f64>,
    senses: Vec<Sense>,
    #[serde(rename = "box")]
    bounds: Option<BoxFile>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u64>,
}

impl TripletsFile {
    fn from_matrix(m: &SparseMatrix) -> Self {
        let mut t = TripletsFile {
            rows: Vec::with_capacity(m.nnz()),
            cols: Vec::with_capacity(m.nnz()),
            vals: Vec::with_capacity(m.nnz()),
        };
        for (r, c, v) in m.iter() {
            t.rows.push(r);
            t.cols.push(c);
            t.vals.push(v);
        }
        t
    }

    fn into_matrix(self, name: &str, n_rows: usize, n_cols: usize) -> Result<SparseMatrix> {
        if self.rows.len() != self.vals.len() || self.cols.len() != self.vals.len() {
            return Err(Error::DimensionMismatch {
                what: format!("{name} triplet arrays"),
                expected: self.vals.len(),
                found: self.rows.len().min(self.cols.len()),
            });
        }
        SparseMatrix::from_triplets(
            n_rows,
            n_cols,
            self.rows
                .into_iter()
                .zip(self.cols)
                .zip(self.vals)
                .map(|((r, c), v)| (r, c, v)),
        )
    }
}

fn bound_to_file(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|&b| b.is_finite().then_some(b)).collect()
}

fn bound_from_file(v: Vec<Option<f64>>, missing: f64) -> Vec<f64> {
    v.into_iter().map(|b| b.unwrap_or(missing)).collect()
}

pub fn problem_to_json(problem: &QpProblem) -> String {
    let file = ProblemFile {
        version: PROBLEM_FILE_VERSION,
        n_vars: problem.n_vars(),
        n_constraints: problem.n_constraints(),
        q: TripletsFile::from_matrix(&problem.q),
        p: problem.p.clone(),
        a: TripletsFile::from_matrix(&problem.a),
        k: problem.k.clone(),
        senses: problem.senses.clone(),
        bounds: problem.bounds.as_ref().map(|b| BoxFile {
            lower: bound_to_file(&b.lower),
            upper: bound_to_file(&b.upper),
        }),
    };
    serde_json::to_string(&file).expect("problem serialization cannot fail")
}

/// Parses a problem file. `context` names the source in error messages.
pub fn problem_from_json(text: &str, context: &str) -> Result<QpProblem> {
    let parse_err = |e: serde_json::Error| Error::Parse {
        context: context.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse_err)?;
    match probe.version {
        Some(PROBLEM_FILE_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersion {
                found,
                expected: PROBLEM_FILE_VERSION,
            })
        }
        None => {
            return Err(Error::Parse {
                context: context.to_string(),
                line: 0,
                column: 0,
                message: "missing field `version`".into(),
            })
        }
    }
    let file: ProblemFile = serde_json::from_str(text).map_err(parse_err)?;
    let (l, m) = (file.n_vars, file.n_constraints);
    let q = file.q.into_matrix("Q", l, l)?;
    let a = file.a.into_matrix("A", m, l)?;
    let bounds = file.bounds.map(|b| {
        BoxBounds::new(
            bound_from_file(b.lower, f64::NEG_INFINITY),
            bound_from_file(b.upper, f64::INFINITY),
        )
    });
    Ok(QpProblem::new(q, file.p, a, file.k, file.senses, bounds))
}

pub fn save_problem(problem: &QpProblem, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, problem_to_json(problem)).map_err(|e| Error::io(path, e))
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<QpProblem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    problem_from_json(&text, &path.display().to_string())
}
