//! On-disk artifacts passed between pipeline stages. Each one records the
//! problem fingerprint it was produced for.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, Error, Result};
use crate::invariant::InvariantResult;
use crate::mpc::MpcProblem;
use crate::neural::{MlpParams, StopReason, TrainReport};
use crate::poly::HPolytope;

pub const ARTIFACT_VERSION: &str = "v1";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| io_at(path, e))?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<MpcProblem> {
    let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    MpcProblem::from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn check_version(v: &str) -> Result<()> {
    if v != ARTIFACT_VERSION {
        return Err(Error::Parse(format!(
            "field \"version\" is \"{v}\", expected \"{ARTIFACT_VERSION}\""
        )));
    }
    Ok(())
}

fn check_hash(found: &str, problem: &MpcProblem) -> Result<()> {
    let expected = problem.fingerprint();
    if found != expected {
        return Err(Error::HashMismatch {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CinfArtifact {
    pub version: String,
    pub problem_hash: String,
    pub converged: bool,
    pub iterations: usize,
    pub row_history: Vec<usize>,
    pub c_inf: HPolytope,
}

impl CinfArtifact {
    pub fn new(problem: &MpcProblem, inv: &InvariantResult) -> Self {
        CinfArtifact {
            version: ARTIFACT_VERSION.into(),
            problem_hash: problem.fingerprint(),
            converged: inv.converged,
            iterations: inv.iterations,
            row_history: inv.row_history.clone(),
            c_inf: inv.c_inf.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = read_json(path)?;
        check_version(&a.version)?;
        Ok(a)
    }

    pub fn ensure_problem(&self, problem: &MpcProblem) -> Result<()> {
        check_hash(&self.problem_hash, problem)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkArtifact {
    pub version: String,
    pub problem_hash: String,
    /// Seed of the training dataset.
    pub data_seed: u64,
    /// Seed of initialization and batch shuffling.
    pub seed: u64,
    pub gamma: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub final_loss: f64,
    pub params: MlpParams,
}

impl NetworkArtifact {
    pub fn new(problem_hash: &str, data_seed: u64, seed: u64, gamma: f64, report: &TrainReport) -> Self {
        NetworkArtifact {
            version: ARTIFACT_VERSION.into(),
            problem_hash: problem_hash.into(),
            data_seed,
            seed,
            gamma,
            epochs_run: report.epochs_run,
            stop_reason: report.stop_reason,
            final_loss: report.final_loss(),
            params: report.final_params.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: Self = read_json(path)?;
        check_version(&a.version)?;
        Ok(a)
    }

    pub fn ensure_problem(&self, problem: &MpcProblem) -> Result<()> {
        check_hash(&self.problem_hash, problem)
    }
}
