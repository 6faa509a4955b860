//! Primal active-set method for strictly convex dense QPs
//! `min ½zᵀHz + qᵀz  s.t.  G z ≤ b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::lp;

const ZERO_ROW: f64 = 1e-12;
/// Multipliers below this are dropped from the working set.
const DROP_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    /// Slack and multiplier threshold for calling a constraint active.
    pub act_tol: f64,
    /// Iteration cap is `iter_factor × (number of constraints)`.
    pub iter_factor: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            act_tol: 1e-7,
            iter_factor: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Constraint indices used for sensitivity, ascending.
    pub active_set: Vec<usize>,
    /// One multiplier per constraint row; zero off the working set.
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    /// A constraint in the active set has a multiplier ≤ act_tol, or an inactive
    /// constraint has slack ≤ act_tol: the state sits on a piece boundary.
    pub on_boundary: bool,
    pub iterations: usize,
}

/// Optimal input sequence and first input at a given state.
#[derive(Clone, Debug)]
pub struct ControlSolution {
    pub u_seq: DVector<f64>,
    pub u0: DVector<f64>,
    pub active_set: Vec<usize>,
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub on_boundary: bool,
}

impl ControlSolution {
    pub(crate) fn from_qp(sol: QpSolution, m: usize) -> Self {
        ControlSolution {
            u0: sol.z.rows(0, m).into_owned(),
            u_seq: sol.z,
            active_set: sol.active_set,
            multipliers: sol.multipliers,
            status: sol.status,
            on_boundary: sol.on_boundary,
        }
    }
}

fn infeasible(nv: usize, rows: usize) -> QpSolution {
    QpSolution {
        z: DVector::zeros(nv),
        active_set: Vec::new(),
        multipliers: DVector::zeros(rows),
        status: QpStatus::Infeasible,
        on_boundary: false,
        iterations: 0,
    }
}

/// Solves `[H Gᵂᵀ; Gᵂ 0] (z, λ) = (top, bottom)` with one step of iterative
/// refinement. Returns `None` when the matrix is singular.
fn kkt_solve(
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    work: &[usize],
    top: &DVector<f64>,
    bottom: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let nv = h.nrows();
    let k = work.len();
    let mut kkt = DMatrix::zeros(nv + k, nv + k);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
    for (r, &i) in work.iter().enumerate() {
        for j in 0..nv {
            kkt[(nv + r, j)] = g[(i, j)];
            kkt[(j, nv + r)] = g[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(nv + k);
    rhs.rows_mut(0, nv).copy_from(top);
    rhs.rows_mut(nv, k).copy_from(bottom);
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    if let Some(corr) = lu.solve(&(&rhs - &kkt * &sol)) {
        sol += corr;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, nv).into_owned(), sol.rows(nv, k).into_owned()))
}

/// Step `p` and working-set multipliers from the current gradient.
fn eqp_step(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    g: &DMatrix<f64>,
    work: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    kkt_solve(h, g, work, &(-grad), &DVector::zeros(work.len()))
}

/// Minimizer and multipliers with every working-set row held at equality.
fn eqp_point(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    work: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    kkt_solve(h, g, work, &(-q), &b.select_rows(work.iter()))
}

fn rows_independent(g: &DMatrix<f64>, idx: &[usize]) -> bool {
    if idx.is_empty() {
        return true;
    }
    if idx.len() > g.ncols() {
        return false;
    }
    let sub = g.select_rows(idx.iter());
    let sv = sub.singular_values();
    sv.min() > 1e-9 * sv.max().max(1.0)
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &QpOptions,
) -> Result<QpSolution> {
    let nv = h.nrows();
    let rows = g.nrows();
    if h.ncols() != nv || q.len() != nv || g.ncols() != nv {
        return Err(Error::dim("QP data", nv, q.len().max(g.ncols())));
    }
    if b.len() != rows {
        return Err(Error::dim("QP constraint offsets", rows, b.len()));
    }

    // Rows with no decision-variable dependence are pure conditions on the data.
    let scale = b.amax().max(1.0);
    let live: Vec<usize> = (0..rows).filter(|&i| g.row(i).amax() > ZERO_ROW).collect();
    for i in 0..rows {
        if g.row(i).amax() <= ZERO_ROW && b[i] < -1e-9 * scale {
            return Ok(infeasible(nv, rows));
        }
    }
    let slack = |z: &DVector<f64>, i: usize| b[i] - g.row(i).dot(&z.transpose());

    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("QP Hessian is not positive definite".into()))?;
    let mut z = -chol.solve(q);
    let feasible = |z: &DVector<f64>| live.iter().all(|&i| slack(z, i) >= -1e-12 * scale);
    if !feasible(&z) {
        let gl = g.select_rows(live.iter());
        let bl = b.select_rows(live.iter());
        let start = lp::maximize(&DVector::zeros(nv), &gl, &bl, 1e-9);
        if !start.is_optimal() {
            return Ok(infeasible(nv, rows));
        }
        z = start.point;
    }

    let mut work: Vec<usize> = Vec::new();
    let max_iter = opts.iter_factor * rows.max(1);
    let mut iterations = 0;
    // Set after an unblocked full step, which lands on the working-set
    // minimizer; the next step is zero up to rounding.
    let mut at_eqp_min = false;
    let lambda_w = loop {
        if iterations >= max_iter {
            return Err(Error::SolverFailure { iterations });
        }
        iterations += 1;
        let grad = h * &z + q;
        let (p, lam) = eqp_step(h, &grad, g, &work).ok_or_else(|| Error::Degenerate {
            active: work.clone(),
        })?;
        // nv independent working rows pin z to a vertex.
        if at_eqp_min || work.len() == nv || p.amax() <= 1e-12 * (1.0 + z.amax()) {
            at_eqp_min = false;
            // Most negative multiplier leaves; ties go to the lowest index.
            let mut drop: Option<(usize, f64)> = None;
            for (r, &i) in work.iter().enumerate() {
                let l = lam[r];
                if l < -DROP_TOL {
                    match drop {
                        Some((ri, lv)) if l > lv || (l == lv && work[ri] < i) => {}
                        _ => drop = Some((r, l)),
                    }
                }
            }
            match drop {
                None => break lam,
                Some((r, _)) => {
                    work.remove(r);
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut block: Option<usize> = None;
            for &i in &live {
                if work.contains(&i) {
                    continue;
                }
                let gp = g.row(i).dot(&p.transpose());
                if gp > 1e-14 {
                    let step = slack(&z, i).max(0.0) / gp;
                    if step < alpha || (block.is_some() && step == alpha && i < block.unwrap()) {
                        alpha = step;
                        block = Some(i);
                    }
                }
            }
            z += alpha * &p;
            match block {
                Some(i) => {
                    let pos = work.partition_point(|&w| w < i);
                    work.insert(pos, i);
                }
                None => at_eqp_min = true,
            }
        }
    };

    // Re-solve on the final working set; stepping accumulates rounding when
    // the optimum is far from the start.
    let mut lambda_w = lambda_w;
    if let Some((zp, lp)) = eqp_point(h, q, g, b, &work) {
        if live.iter().all(|&i| slack(&zp, i) >= -1e-9 * scale) && lp.iter().all(|l| *l >= -DROP_TOL) {
            z = zp;
            lambda_w = lp;
        }
    }

    let mut multipliers = DVector::zeros(rows);
    for (r, &i) in work.iter().enumerate() {
        multipliers[i] = lambda_w[r];
    }
    let mut on_boundary = work.iter().any(|&i| multipliers[i] <= opts.act_tol);
    let mut active = work.clone();
    for &i in &live {
        if work.contains(&i) || slack(&z, i) >= opts.act_tol {
            continue;
        }
        on_boundary = true;
        let mut cand = active.clone();
        cand.push(i);
        if rows_independent(g, &cand) {
            active = cand;
        }
    }
    active.sort_unstable();
    Ok(QpSolution {
        z,
        active_set: active,
        multipliers,
        status: QpStatus::Optimal,
        on_boundary,
        iterations,
    })
}
