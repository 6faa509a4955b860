//! The full training grid: train sizes × regularization constants × replicate
//! networks, with NMSE and closed-loop cost summaries.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::eval::{self, CostResult};
use crate::invariant::{self, InvariantResult};
use crate::mpc::{MpcPolicy, MpcProblem};
use crate::neural::{self, MlpArchitecture, MlpParams, StopReason, TrainConfig};
use crate::sampler;

/// One `{train size, γ}` network set used in the closed-loop cost comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSet {
    pub train_size: usize,
    pub gamma: f64,
}

impl CostSet {
    pub fn label(&self) -> String {
        format!("S{}_g{}", self.train_size, self.gamma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Problem file; `None` uses the built-in double integrator.
    pub problem: Option<String>,
    pub gammas: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub networks_per_cell: usize,
    pub test_size: usize,
    pub n_traj: usize,
    pub steps: usize,
    pub base_seed: u64,
    pub hidden_widths: Vec<usize>,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// γ and seed are overwritten per run.
    pub train: TrainConfig,
    pub cost_sets: Vec<CostSet>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            problem: None,
            gammas: vec![0.0, 0.1, 1.0, 10.0],
            train_sizes: vec![25, 50, 100],
            networks_per_cell: 10,
            test_size: 100,
            n_traj: 100,
            steps: 3,
            base_seed: 0,
            hidden_widths: vec![16, 16],
            threads: 0,
            train: TrainConfig::default(),
            cost_sets: vec![
                CostSet {
                    train_size: 25,
                    gamma: 1.0,
                },
                CostSet {
                    train_size: 100,
                    gamma: 0.0,
                },
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.train_sizes.is_empty() {
            return Err(Error::InvalidArgument("gammas and train_sizes must be nonempty".into()));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidArgument("every gamma must be non-negative".into()));
        }
        if self.train_sizes.contains(&0)
            || self.networks_per_cell == 0
            || self.test_size == 0
            || self.n_traj == 0
            || self.steps == 0
        {
            return Err(Error::InvalidArgument("all counts must be at least 1".into()));
        }
        for cs in &self.cost_sets {
            if !self.train_sizes.contains(&cs.train_size) || !self.gammas.contains(&cs.gamma) {
                return Err(Error::InvalidArgument(format!(
                    "cost set {} is not a grid cell",
                    cs.label()
                )));
            }
        }
        self.train.validate()
    }

    pub fn n_runs(&self) -> usize {
        self.train_sizes.len() * self.gammas.len() * self.networks_per_cell
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags keep the seeds of different artifact kinds apart.
#[derive(Clone, Copy, Debug)]
pub enum SeedStream {
    TrainData = 1,
    TrainInit = 2,
    TestData = 3,
    CostStates = 4,
}

/// `base_seed + mix(stream, size index, γ index, replicate)`, each index
/// packed into 16 bits before hashing.
pub fn derive_seed(base: u64, stream: SeedStream, size_idx: usize, gamma_idx: usize, rep: usize) -> u64 {
    let packed = ((stream as u64) << 48)
        | ((size_idx as u64 & 0xffff) << 32)
        | ((gamma_idx as u64 & 0xffff) << 16)
        | (rep as u64 & 0xffff);
    base.wrapping_add(mix(packed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_size: usize,
    pub gamma: f64,
    pub replicate: usize,
    pub data_seed: u64,
    pub train_seed: u64,
    pub epochs: usize,
    pub stop_reason: Option<StopReason>,
    pub final_loss: f64,
    pub nmse_ratio: f64,
    pub nmse_db: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub train_size: usize,
    pub gamma: f64,
    pub completed: usize,
    /// `10·log₁₀` of the mean NMSE ratio over the completed networks.
    pub nmse_db: f64,
    /// Mean of the per-network dB values.
    pub mean_of_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseTableRow {
    pub train_size: usize,
    pub nmse_db_unregularized: f64,
    /// Lowest cell NMSE over the nonzero γ values.
    pub nmse_db_regularized: f64,
    pub best_gamma_nonzero: f64,
    /// γ with the lowest NMSE over all values, including 0.
    pub best_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTableRow {
    pub label: String,
    pub train_size: Option<usize>,
    pub gamma: Option<f64>,
    /// Mean over networks of each network's mean `J`.
    pub mean_j: f64,
    /// `J` per initial state, averaged over the networks of the set.
    pub per_trajectory: Vec<f64>,
    pub violations: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub problem_hash: String,
    pub invariant: InvariantResult,
    pub runs: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub nmse_table: Vec<NmseTableRow>,
    pub cost_table: Vec<CostTableRow>,
    pub failures: Vec<String>,
}

struct RunOutput {
    record: RunRecord,
    params: Option<MlpParams>,
}

fn run_cell(
    cfg: &ExperimentConfig,
    problem: &MpcProblem,
    c_inf: &crate::poly::HPolytope,
    test_ds: &Dataset,
    arch: &MlpArchitecture,
    (si, gi, rep): (usize, usize, usize),
) -> RunOutput {
    let train_size = cfg.train_sizes[si];
    let gamma = cfg.gammas[gi];
    let data_seed = derive_seed(cfg.base_seed, SeedStream::TrainData, si, gi, rep);
    let train_seed = derive_seed(cfg.base_seed, SeedStream::TrainInit, si, gi, rep);
    let mut record = RunRecord {
        train_size,
        gamma,
        replicate: rep,
        data_seed,
        train_seed,
        epochs: 0,
        stop_reason: None,
        final_loss: f64::NAN,
        nmse_ratio: f64::NAN,
        nmse_db: f64::NAN,
        error: None,
    };
    let result = (|| -> Result<MlpParams> {
        let ds = dataset::generate(problem, c_inf, train_size, data_seed, DatasetKind::Train)?;
        let tcfg = TrainConfig {
            gamma,
            seed: train_seed,
            ..cfg.train.clone()
        };
        let report = neural::train(&ds, arch, &tcfg)?;
        record.epochs = report.epochs_run;
        record.stop_reason = Some(report.stop_reason);
        record.final_loss = report.final_loss();
        let n = eval::nmse_on_dataset(&report.final_params, test_ds)?;
        record.nmse_ratio = n.ratio;
        record.nmse_db = n.db;
        Ok(report.final_params)
    })();
    match result {
        Ok(p) => RunOutput {
            record,
            params: Some(p),
        },
        Err(e) => {
            record.error = Some(e.to_string());
            RunOutput { record, params: None }
        }
    }
}

fn summarize_cells(cfg: &ExperimentConfig, runs: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for &size in &cfg.train_sizes {
        for &gamma in &cfg.gammas {
            let ok: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.train_size == size && r.gamma == gamma && r.error.is_none())
                .collect();
            let k = ok.len() as f64;
            let (nmse_db, mean_of_db) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean_ratio = ok.iter().map(|r| r.nmse_ratio).sum::<f64>() / k;
                (
                    eval::NmseResult::from_ratio(mean_ratio, 0).db,
                    ok.iter().map(|r| r.nmse_db).sum::<f64>() / k,
                )
            };
            cells.push(CellSummary {
                train_size: size,
                gamma,
                completed: ok.len(),
                nmse_db,
                mean_of_db,
            });
        }
    }
    cells
}

fn nmse_table(cfg: &ExperimentConfig, cells: &[CellSummary]) -> Vec<NmseTableRow> {
    let argmin = |it: &mut dyn Iterator<Item = &CellSummary>| -> (f64, f64) {
        it.filter(|c| !c.nmse_db.is_nan())
            .fold((f64::NAN, f64::INFINITY), |(g, best), c| {
                if c.nmse_db < best {
                    (c.gamma, c.nmse_db)
                } else {
                    (g, best)
                }
            })
    };
    cfg.train_sizes
        .iter()
        .map(|&size| {
            let row = || cells.iter().filter(move |c| c.train_size == size);
            let unreg = row().find(|c| c.gamma == 0.0).map_or(f64::NAN, |c| c.nmse_db);
            let (g_nz, db_nz) = argmin(&mut row().filter(|c| c.gamma != 0.0));
            let (g_all, _) = argmin(&mut row());
            NmseTableRow {
                train_size: size,
                nmse_db_unregularized: unreg,
                nmse_db_regularized: if db_nz.is_finite() { db_nz } else { f64::NAN },
                best_gamma_nonzero: g_nz,
                best_gamma: g_all,
            }
        })
        .collect()
}

fn cost_row(
    label: String,
    set: Option<CostSet>,
    results: &[CostResult],
) -> CostTableRow {
    let k = results.len() as f64;
    let len = results.iter().map(|r| r.per_trajectory.len()).min().unwrap_or(0);
    let per_trajectory = (0..len)
        .map(|t| results.iter().map(|r| r.per_trajectory[t]).sum::<f64>() / k)
        .collect();
    CostTableRow {
        label,
        train_size: set.map(|s| s.train_size),
        gamma: set.map(|s| s.gamma),
        mean_j: results.iter().map(|r| r.mean).sum::<f64>() / k,
        per_trajectory,
        violations: results.iter().map(|r| r.violations).sum(),
        excluded: results.first().map_or(0, |r| r.excluded),
    }
}

/// Runs the grid on `problem`. Cell failures are recorded in
/// `ExperimentOutcome::failures`; only setup errors abort.
pub fn run(problem: &MpcProblem, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_with_progress(problem, cfg, &|_| {})
}

pub fn run_with_progress(
    problem: &MpcProblem,
    cfg: &ExperimentConfig,
    progress: &(dyn Fn(&RunRecord) + Sync),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    problem.validate()?;
    let n = problem.system.n_state();
    let m = problem.system.n_input();
    let arch = MlpArchitecture::new(n, cfg.hidden_widths.clone(), m)?;

    let inv = invariant::max_control_invariant(
        &problem.x_set,
        &problem.u_set,
        &problem.system.a,
        &problem.system.b,
        invariant::DEFAULT_MAX_ITER,
    )?;
    if !inv.converged {
        return Err(Error::NotConverged(format!(
            "invariant set iteration stopped after {} iterations",
            inv.iterations
        )));
    }
    let c_inf = inv.c_inf.clone();

    let test_sets = (0..cfg.train_sizes.len())
        .map(|si| {
            let seed = derive_seed(cfg.base_seed, SeedStream::TestData, si, 0, 0);
            dataset::generate(problem, &c_inf, cfg.test_size, seed, DatasetKind::Test)
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..cfg.train_sizes.len())
        .flat_map(|si| {
            (0..cfg.gammas.len())
                .flat_map(move |gi| (0..cfg.networks_per_cell).map(move |r| (si, gi, r)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outputs: Vec<RunOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&job| {
                let out = run_cell(cfg, problem, &c_inf, &test_sets[job.0], &arch, job);
                progress(&out.record);
                out
            })
            .collect()
    });

    let mut failures: Vec<String> = outputs
        .iter()
        .filter_map(|o| {
            o.record.error.as_ref().map(|e| {
                format!(
                    "size {} gamma {} replicate {}: {e}",
                    o.record.train_size, o.record.gamma, o.record.replicate
                )
            })
        })
        .collect();
    let runs: Vec<RunRecord> = outputs.iter().map(|o| o.record.clone()).collect();
    let cells = summarize_cells(cfg, &runs);
    let nmse_table = nmse_table(cfg, &cells);

    // Every set is simulated from the same initial states.
    let starts = sampler::sample_states(
        &c_inf,
        cfg.n_traj,
        derive_seed(cfg.base_seed, SeedStream::CostStates, 0, 0, 0),
    )?;
    let mut cost_table = Vec::new();
    let qp = problem.condense()?;
    let mpc = eval::cost_over_states(&MpcPolicy::new(&qp), problem, &starts, cfg.steps)?;
    cost_table.push(cost_row("MPC".into(), None, std::slice::from_ref(&mpc)));
    for cs in &cfg.cost_sets {
        let nets: Vec<&MlpParams> = outputs
            .iter()
            .filter(|o| o.record.train_size == cs.train_size && o.record.gamma == cs.gamma)
            .filter_map(|o| o.params.as_ref())
            .collect();
        if nets.is_empty() {
            failures.push(format!("cost set {}: no trained networks", cs.label()));
            continue;
        }
        let results = pool.install(|| {
            nets.par_iter()
                .map(|p| eval::cost_over_states(*p, problem, &starts, cfg.steps))
                .collect::<Vec<_>>()
        });
        let mut ok = Vec::new();
        for r in results {
            match r {
                Ok(c) => ok.push(c),
                Err(e) => failures.push(format!("cost set {}: {e}", cs.label())),
            }
        }
        if !ok.is_empty() {
            cost_table.push(cost_row(cs.label(), Some(*cs), &ok));
        }
    }

    Ok(ExperimentOutcome {
        config: cfg.clone(),
        problem_hash: problem.fingerprint(),
        invariant: inv,
        runs,
        cells,
        nmse_table,
        cost_table,
        failures,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{v:.4}")
    }
}

impl ExperimentOutcome {
    /// `gamma,train_size,seed,nmse_db`, one row per network.
    pub fn nmse_csv(&self) -> String {
        let mut s = String::from("gamma,train_size,seed,nmse_db\n");
        for r in self.runs.iter().filter(|r| r.error.is_none()) {
            let _ = writeln!(s, "{},{},{},{}", r.gamma, r.train_size, r.data_seed, r.nmse_db);
        }
        s
    }

    /// `set_label,gamma,traj_index,J`, with `J` averaged over the networks of the set.
    pub fn cost_csv(&self) -> String {
        let mut s = String::from("set_label,gamma,traj_index,J\n");
        for row in &self.cost_table {
            let g = row.gamma.map_or(String::new(), |g| g.to_string());
            for (t, j) in row.per_trajectory.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{}", row.label, g, t, j);
            }
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "train_size,gamma,replicate,data_seed,train_seed,epochs,stop_reason,final_loss,nmse_ratio,nmse_db,error\n",
        );
        for r in &self.runs {
            let stop = r.stop_reason.map_or(String::new(), |s| format!("{s:?}"));
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.train_size,
                r.gamma,
                r.replicate,
                r.data_seed,
                r.train_seed,
                r.epochs,
                stop,
                r.final_loss,
                r.nmse_ratio,
                r.nmse_db,
                err
            );
        }
        s
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("train_size,gamma,completed,nmse_db,mean_of_db\n");
        for c in &self.cells {
            let _ = writeln!(s, "{},{},{},{},{}", c.train_size, c.gamma, c.completed, c.nmse_db, c.mean_of_db);
        }
        s
    }

    pub fn nmse_table_csv(&self) -> String {
        let mut s = String::from(
            "train_size,nmse_db_unregularized,nmse_db_regularized,best_gamma_nonzero,best_gamma\n",
        );
        for r in &self.nmse_table {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.train_size, r.nmse_db_unregularized, r.nmse_db_regularized, r.best_gamma_nonzero, r.best_gamma
            );
        }
        s
    }

    pub fn cost_table_csv(&self) -> String {
        let mut s = String::from("set_label,train_size,gamma,mean_j,violations,excluded\n");
        for r in &self.cost_table {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.label,
                r.train_size.map_or(String::new(), |v| v.to_string()),
                r.gamma.map_or(String::new(), |v| v.to_string()),
                r.mean_j,
                r.violations,
                r.excluded
            );
        }
        s
    }

    pub fn report_markdown(&self) -> String {
        let cfg = &self.config;
        let mut s = String::from("# Experiment report\n\n");
        let _ = writeln!(s, "- problem hash: `{}`", self.problem_hash);
        let _ = writeln!(s, "- base seed: {}", cfg.base_seed);
        let _ = writeln!(
            s,
            "- networks: hidden widths {:?}, {} per cell, {} runs",
            cfg.hidden_widths,
            cfg.networks_per_cell,
            self.runs.len()
        );
        let _ = writeln!(
            s,
            "- invariant set: {} rows after {} iterations",
            self.invariant.c_inf.n_rows(),
            self.invariant.iterations
        );
        let _ = writeln!(s, "- failed cells: {}\n", self.failures.len());

        s.push_str("## Test NMSE per cell (dB of the mean ratio)\n\n| Set |");
        for g in &cfg.gammas {
            let _ = write!(s, " γ = {g} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(cfg.gammas.len()));
        s.push('\n');
        for &size in &cfg.train_sizes {
            let _ = write!(s, "| S{size} |");
            for &g in &cfg.gammas {
                let c = self.cells.iter().find(|c| c.train_size == size && c.gamma == g);
                let _ = write!(s, " {} |", fmt_db(c.map_or(f64::NAN, |c| c.nmse_db)));
            }
            s.push('\n');
        }

        s.push_str("\n## NMSE summary\n\n| Set | NMSE [dB] (no regularization) | NMSE [dB] (regularization) | Best γ |\n|---|---|---|---|\n");
        for r in &self.nmse_table {
            let _ = writeln!(
                s,
                "| S{} | {} | {} | {} |",
                r.train_size,
                fmt_db(r.nmse_db_unregularized),
                fmt_db(r.nmse_db_regularized),
                r.best_gamma
            );
        }

        let _ = write!(
            s,
            "\n## Control cost ({} trajectories, {} steps)\n\n| {{Set, γ}} | J (avg. over trajectories) | Violating steps |\n|---|---|---|\n",
            cfg.n_traj, cfg.steps
        );
        for r in &self.cost_table {
            let name = match (r.train_size, r.gamma) {
                (Some(n), Some(g)) => format!("{{S{n}, {g}}}"),
                _ => r.label.clone(),
            };
            let _ = writeln!(s, "| {name} | {:.4} | {} |", r.mean_j, r.violations);
        }
        if !self.failures.is_empty() {
            s.push_str("\n## Failures\n\n");
            for f in &self.failures {
                let _ = writeln!(s, "- {f}");
            }
        }
        s
    }

    /// Writes every summary artifact into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("nmse.csv"), self.nmse_csv())?;
        std::fs::write(dir.join("cost.csv"), self.cost_csv())?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("cells.csv"), self.cells_csv())?;
        std::fs::write(dir.join("nmse_table.csv"), self.nmse_table_csv())?;
        std::fs::write(dir.join("cost_table.csv"), self.cost_table_csv())?;
        std::fs::write(dir.join("report.md"), self.report_markdown())?;
        Ok(())
    }
}

/// Shared initial states for closed-loop comparisons outside the grid.
pub fn cost_states(c_inf: &crate::poly::HPolytope, cfg: &ExperimentConfig) -> Result<Vec<DVector<f64>>> {
    sampler::sample_states(
        c_inf,
        cfg.n_traj,
        derive_seed(cfg.base_seed, SeedStream::CostStates, 0, 0, 0),
    )
}
