//! Reference computations that share no code with the library's solvers.
#![allow(dead_code)]

use mpcgrad::mpc::{CondensedQp, MpcProblem};
use mpcgrad::poly::HPolytope;
use nalgebra::{DMatrix, DVector};

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Strictly convex QP `min ½zᵀHz + qᵀz s.t. Gz ≤ b` by trying every subset of
/// at most `nv` constraints as the active set. Returns `None` when no subset
/// yields a KKT point, which for a strictly convex QP means infeasible.
pub fn enumerate_qp(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<DVector<f64>> {
    let nv = h.nrows();
    let rows = g.nrows();
    let tol = 1e-8 * (1.0 + b.amax());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << rows) {
        if mask.count_ones() as usize > nv {
            continue;
        }
        let idx: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        let mut kkt = DMatrix::zeros(nv + k, nv + k);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
        let mut rhs = DVector::zeros(nv + k);
        rhs.rows_mut(0, nv).copy_from(&(-q));
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..nv {
                kkt[(nv + r, j)] = g[(i, j)];
                kkt[(j, nv + r)] = g[(i, j)];
            }
            rhs[nv + r] = b[i];
        }
        let svd = kkt.clone().svd(false, false);
        if svd.singular_values.min() < 1e-10 * svd.singular_values.max().max(1.0) {
            continue;
        }
        let lu = kkt.clone().lu();
        let Some(mut sol) = lu.solve(&rhs) else { continue };
        // One refinement step; multipliers can be large on far vertices.
        if let Some(corr) = lu.solve(&(&rhs - &kkt * &sol)) {
            sol += corr;
        }
        let z = sol.rows(0, nv).into_owned();
        let lam = sol.rows(nv, k);
        if lam.iter().any(|l| *l < -1e-9) {
            continue;
        }
        if (g * &z - b).iter().any(|s| *s > tol) {
            continue;
        }
        let obj = 0.5 * z.dot(&(h * &z)) + q.dot(&z);
        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z)
}

/// First input of the MPC law through [`enumerate_qp`].
pub fn enumerate_u0(qp: &CondensedQp, x: &DVector<f64>) -> Option<DVector<f64>> {
    let (lin, rhs) = qp.parametrize(x).unwrap();
    enumerate_qp(&qp.h, &lin, &qp.g, &rhs).map(|z| z.rows(0, qp.n_input).into_owned())
}

/// Feasible input interval `{u ∈ U : A x + B u ∈ S}` for a scalar input,
/// computed row by row.
pub fn scalar_input_interval(
    s: &HPolytope,
    u_set: &HPolytope,
    a: &DMatrix<f64>,
    bcol: &DVector<f64>,
    x: &DVector<f64>,
) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let ax = a * x;
    let mut clip = |coef: f64, rhs: f64| {
        if coef > 1e-14 {
            hi = hi.min(rhs / coef);
        } else if coef < -1e-14 {
            lo = lo.max(rhs / coef);
        } else if rhs < -1e-12 {
            hi = f64::NEG_INFINITY;
        }
    };
    for i in 0..s.n_rows() {
        let c = s.c().row(i);
        clip(c.dot(&bcol.transpose()), s.d()[i] - c.dot(&ax.transpose()));
    }
    for i in 0..u_set.n_rows() {
        clip(u_set.c()[(i, 0)], u_set.d()[i]);
    }
    (lo <= hi + 1e-12).then_some((lo, hi))
}

/// Central differences of `f` at `x`, one column per coordinate.
pub fn jacobian_fd(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        j.set_column(c, &d);
    }
    j
}

/// `max |a − b| / max(1, |b|)` entrywise.
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

pub fn double_integrator() -> MpcProblem {
    MpcProblem::double_integrator()
}

/// Residuals (stationarity, primal violation, complementarity) of a QP point.
pub fn kkt_residuals(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
) -> (f64, f64, f64) {
    let stat = (h * z + q + g.transpose() * lambda).amax();
    let slack = b - g * z;
    let primal = (-slack.min()).max(0.0);
    let comp = slack.component_mul(lambda).amax();
    (stat, primal, comp)
}

/// Chi-square quantile at `level`.
pub fn chi_square_critical(dof: f64, level: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof).unwrap().inverse_cdf(level)
}
