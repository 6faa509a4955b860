//! Training and test triplets `(x, u*(x), ∂u*/∂x)` and their file format.
//!
//! File layout (JSON, version `"v1"`):
//!
//! ```text
//! {
//!   "version": "v1",
//!   "kind": "train" | "test",
//!   "seed": <u64>,
//!   "problem_hash": "<sha256 hex of the generating problem>",
//!   "state_dim": n,
//!   "input_dim": m,
//!   "grad_shape": [m, n],
//!   "count": k,
//!   "x": [k·n floats, sample-major],
//!   "u": [k·m floats],
//!   "u_grad": [k·m·n floats, each gradient row-major],
//!   "on_boundary": [k booleans]
//! }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};
use crate::mpc::{CondensedQp, MpcProblem, QpOptions, QpStatus};
use crate::poly::HPolytope;
use crate::sampler;

pub const FORMAT_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriplet {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// `m × n`.
    pub u_grad: DMatrix<f64>,
    pub on_boundary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub problem_hash: String,
    pub seed: u64,
    pub kind: DatasetKind,
    pub state_dim: usize,
    pub input_dim: usize,
    pub samples: Vec<SampleTriplet>,
}

/// Solves the MPC problem and its sensitivity at one state.
pub fn label_state(qp: &CondensedQp, x: &DVector<f64>, opts: &QpOptions) -> Result<SampleTriplet> {
    let sol = qp.solve_with(x, opts)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::InfeasibleState {
            state: x.iter().copied().collect(),
        });
    }
    let u_grad = qp.sensitivity(&sol, x)?;
    Ok(SampleTriplet {
        x: x.clone(),
        u: sol.u0,
        u_grad,
        on_boundary: sol.on_boundary,
    })
}

pub fn generate(
    problem: &MpcProblem,
    c_inf: &HPolytope,
    n: usize,
    seed: u64,
    kind: DatasetKind,
) -> Result<Dataset> {
    generate_with(problem, c_inf, n, seed, kind, &QpOptions::default())
}

pub fn generate_with(
    problem: &MpcProblem,
    c_inf: &HPolytope,
    n: usize,
    seed: u64,
    kind: DatasetKind,
    opts: &QpOptions,
) -> Result<Dataset> {
    let qp = problem.condense()?;
    if c_inf.dim() != qp.n_state {
        return Err(Error::dim("invariant set", qp.n_state, c_inf.dim()));
    }
    let states = sampler::sample_states(c_inf, n, seed)?;
    let samples = states
        .par_iter()
        .map(|x| label_state(&qp, x, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        problem_hash: problem.fingerprint(),
        seed,
        kind,
        state_dim: qp.n_state,
        input_dim: qp.n_input,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: String,
    kind: DatasetKind,
    seed: u64,
    problem_hash: String,
    state_dim: usize,
    input_dim: usize,
    grad_shape: [usize; 2],
    count: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    u_grad: Vec<f64>,
    on_boundary: Vec<bool>,
}

fn check_len(field: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Parse(format!(
            "field \"{field}\" has {got} entries, expected {expected}"
        )));
    }
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Refuses data generated for a different problem.
    pub fn ensure_problem(&self, problem: &MpcProblem) -> Result<()> {
        let expected = problem.fingerprint();
        if self.problem_hash != expected {
            return Err(Error::HashMismatch {
                expected,
                found: self.problem_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let (n, m) = (self.state_dim, self.input_dim);
        let file = DatasetFile {
            version: FORMAT_VERSION.into(),
            kind: self.kind,
            seed: self.seed,
            problem_hash: self.problem_hash.clone(),
            state_dim: n,
            input_dim: m,
            grad_shape: [m, n],
            count: self.samples.len(),
            x: self.samples.iter().flat_map(|s| s.x.iter().copied()).collect(),
            u: self.samples.iter().flat_map(|s| s.u.iter().copied()).collect(),
            u_grad: self
                .samples
                .iter()
                .flat_map(|s| crate::matrix_json::to_rows(&s.u_grad).into_iter().flatten())
                .collect(),
            on_boundary: self.samples.iter().map(|s| s.on_boundary).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: DatasetFile = serde_json::from_str(text)?;
        if f.version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "field \"version\" is \"{}\", expected \"{FORMAT_VERSION}\"",
                f.version
            )));
        }
        let (n, m, k) = (f.state_dim, f.input_dim, f.count);
        if n == 0 || m == 0 {
            return Err(Error::Parse("state_dim and input_dim must be positive".into()));
        }
        if f.grad_shape != [m, n] {
            return Err(Error::Parse(format!(
                "field \"grad_shape\" is {:?}, expected [{m}, {n}]",
                f.grad_shape
            )));
        }
        check_len("x", f.x.len(), k * n)?;
        check_len("u", f.u.len(), k * m)?;
        check_len("u_grad", f.u_grad.len(), k * m * n)?;
        check_len("on_boundary", f.on_boundary.len(), k)?;
        let samples = (0..k)
            .map(|i| SampleTriplet {
                x: DVector::from_column_slice(&f.x[i * n..(i + 1) * n]),
                u: DVector::from_column_slice(&f.u[i * m..(i + 1) * m]),
                u_grad: DMatrix::from_row_slice(m, n, &f.u_grad[i * m * n..(i + 1) * m * n]),
                on_boundary: f.on_boundary[i],
            })
            .collect();
        Ok(Dataset {
            problem_hash: f.problem_hash,
            seed: f.seed,
            kind: f.kind,
            state_dim: n,
            input_dim: m,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| io_at(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let s = |a: f64| SampleTriplet {
            x: DVector::from_vec(vec![a, -a]),
            u: DVector::from_vec(vec![0.1 * a]),
            u_grad: DMatrix::from_row_slice(1, 2, &[a, 2.0 * a]),
            on_boundary: a > 1.0,
        };
        Dataset {
            problem_hash: "abc".into(),
            seed: 9,
            kind: DatasetKind::Train,
            state_dim: 2,
            input_dim: 1,
            samples: vec![s(0.5), s(1.5), s(-1.0 / 3.0)],
        }
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        assert_eq!(Dataset::from_json(&ds.to_json()).unwrap(), ds);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let text = tiny().to_json();
        let cut = &text[..text.len() / 2];
        match Dataset::from_json(cut) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_lengths_name_the_field() {
        let text = tiny().to_json().replace("\"count\": 3", "\"count\": 4");
        match Dataset::from_json(&text) {
            Err(Error::Parse(msg)) => assert!(msg.contains("\"x\""), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let text = tiny().to_json().replace("\"v1\"", "\"v0\"");
        assert!(matches!(Dataset::from_json(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn hash_guard() {
        let ds = tiny();
        let err = ds.ensure_problem(&MpcProblem::double_integrator()).unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }));
        assert!(err.to_string().contains("abc"));
    }
}
