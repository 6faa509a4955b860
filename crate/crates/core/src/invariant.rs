//! Maximal control invariant set by fixed-point iteration of the
//! one-step controllable set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{HPolytope, Tolerances};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvariantResult {
    pub c_inf: HPolytope,
    pub iterations: usize,
    pub converged: bool,
    /// Row count of every iterate, starting with the state set itself.
    pub row_history: Vec<usize>,
}

/// `{x : ∃u ∈ U, A x + B u ∈ S}`.
pub fn pre_set(s: &HPolytope, a: &DMatrix<f64>, b: &DMatrix<f64>, u: &HPolytope) -> Result<HPolytope> {
    pre_set_with(s, a, b, u, &Tolerances::default())
}

pub fn pre_set_with(
    s: &HPolytope,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    u: &HPolytope,
    tol: &Tolerances,
) -> Result<HPolytope> {
    let n = s.dim();
    let m = u.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::dim("pre-set dynamics matrix", n, a.nrows().max(a.ncols())));
    }
    if b.nrows() != n || b.ncols() != m {
        return Err(Error::dim("pre-set input matrix", n * m, b.nrows() * b.ncols()));
    }
    let (ks, ku) = (s.n_rows(), u.n_rows());
    let mut c = DMatrix::zeros(ks + ku, n + m);
    c.view_mut((0, 0), (ks, n)).copy_from(&(s.c() * a));
    c.view_mut((0, n), (ks, m)).copy_from(&(s.c() * b));
    c.view_mut((ks, n), (ku, m)).copy_from(u.c());
    let mut d = nalgebra::DVector::zeros(ks + ku);
    d.rows_mut(0, ks).copy_from(s.d());
    d.rows_mut(ks, ku).copy_from(u.d());
    let lifted = HPolytope::from_raw_lenient(c, d, tol.geometric);
    let keep: Vec<usize> = (0..n).collect();
    lifted.project_with(&keep, tol)
}

/// Iterates `Ω₀ = X`, `Ω_{k+1} = Pre(Ω_k) ∩ X` until two consecutive iterates
/// coincide within the geometric tolerance.
pub fn max_control_invariant(
    x_set: &HPolytope,
    u_set: &HPolytope,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    max_iter: usize,
) -> Result<InvariantResult> {
    max_control_invariant_with(x_set, u_set, a, b, max_iter, &Tolerances::default())
}

pub fn max_control_invariant_with(
    x_set: &HPolytope,
    u_set: &HPolytope,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    max_iter: usize,
    tol: &Tolerances,
) -> Result<InvariantResult> {
    let mut omega = x_set.remove_redundant_with(tol)?;
    let mut row_history = vec![omega.n_rows()];
    for k in 1..=max_iter {
        let pre = pre_set_with(&omega, a, b, u_set, tol)?;
        let next = pre.intersect_with(x_set, tol)?;
        if !next.is_feasible_with(tol) {
            return Err(Error::Geometry(format!(
                "iterate {k} is empty: no control invariant subset of the state set"
            )));
        }
        row_history.push(next.n_rows());
        if !next.is_subset(&omega, tol.geometric)? {
            return Err(Error::Geometry(format!(
                "iterate {k} is not contained in its predecessor"
            )));
        }
        if omega.is_subset(&next, tol.geometric)? {
            return Ok(InvariantResult {
                c_inf: next,
                iterations: k,
                converged: true,
                row_history,
            });
        }
        omega = next;
    }
    Ok(InvariantResult {
        c_inf: omega,
        iterations: max_iter,
        converged: false,
        row_history,
    })
}
