//! Dense two-phase tableau simplex for small linear programs over free
//! variables: `max cᵀx  s.t.  A x ≤ b`.
//!
//! Free variables are split as `x = x⁺ − x⁻`, one slack per row, and an
//! artificial variable for every row whose right-hand side is negative.
//! Entering and leaving variables follow Bland's rule, so the method
//! terminates on degenerate problems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Clone, Debug)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Meaningful only when `status == Optimal`.
    pub point: DVector<f64>,
    pub value: f64,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn non_optimal(status: LpStatus, n: usize) -> Self {
        LpOutcome {
            status,
            point: DVector::zeros(n),
            value: f64::NAN,
        }
    }
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; the last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes the objective row over columns `< allowed`; returns false when unbounded.
    fn run(&mut self, allowed: usize, max_iter: usize) -> bool {
        let m = self.m();
        let rhs = self.ncols;
        for _ in 0..max_iter {
            let obj = &self.t[m];
            let Some(enter) = (0..allowed).find(|&j| obj[j] < -COST_EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][enter];
                if a > PIVOT_EPS {
                    let ratio = self.t[i][rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12
                                || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((row, _)) => self.pivot(row, enter),
            }
        }
        // Bland's rule cannot cycle; reaching the cap means numerical trouble.
        true
    }
}

/// Solves `max objᵀx s.t. a x ≤ b` with `x` free.
pub fn maximize(obj: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, feas_tol: f64) -> LpOutcome {
    let n = a.ncols();
    let m = a.nrows();
    assert_eq!(obj.len(), n, "objective length must equal column count");
    assert_eq!(b.len(), m, "rhs length must equal row count");

    if m == 0 {
        return if obj.iter().all(|&c| c == 0.0) {
            LpOutcome {
                status: LpStatus::Optimal,
                point: DVector::zeros(n),
                value: 0.0,
            }
        } else {
            LpOutcome::non_optimal(LpStatus::Unbounded, n)
        };
    }

    // Columns: x⁺ (n) | x⁻ (n) | slack (m) | artificials (k) | rhs
    let neg_rows: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = neg_rows.len();
    let n_struct = 2 * n + m;
    let ncols = n_struct + n_art;
    let mut t = vec![vec![0.0; ncols + 1]; m + 1];
    let mut basis = vec![0; m];
    let mut art_idx = 0;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[(i, j)];
            t[i][n + j] = -sign * a[(i, j)];
        }
        t[i][2 * n + i] = sign;
        t[i][ncols] = sign * b[i];
        if sign < 0.0 {
            let col = n_struct + art_idx;
            t[i][col] = 1.0;
            basis[i] = col;
            art_idx += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau { t, basis, ncols };
    let max_iter = 50 * (ncols + m + 10);
    let b_scale = b.amax().max(1.0);

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials, expressed in non-basic terms.
        for j in n_struct..ncols {
            tab.t[m][j] = 1.0;
        }
        for (i, &bi) in tab.basis.clone().iter().enumerate() {
            if bi >= n_struct {
                let row = tab.t[i].clone();
                for (v, r) in tab.t[m].iter_mut().zip(&row) {
                    *v -= r;
                }
            }
        }
        tab.run(ncols, max_iter);
        let infeas = -tab.t[m][ncols];
        if infeas > feas_tol.max(1e-9 * b_scale) {
            return LpOutcome::non_optimal(LpStatus::Infeasible, n);
        }
        // Drive zero-level artificials out of the basis.
        let mut i = 0;
        while i < tab.m() {
            if tab.basis[i] >= n_struct {
                if let Some(col) = (0..n_struct).find(|&j| tab.t[i][j].abs() > 1e-9) {
                    tab.pivot(i, col);
                    i += 1;
                } else {
                    // Redundant equality row.
                    tab.t.remove(i);
                    tab.basis.remove(i);
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase 2: minimize -objᵀx.
    let m2 = tab.m();
    let mut cost = vec![0.0; ncols];
    for j in 0..n {
        cost[j] = -obj[j];
        cost[n + j] = obj[j];
    }
    let mut zrow = vec![0.0; ncols + 1];
    zrow[..ncols].copy_from_slice(&cost);
    for i in 0..m2 {
        let cb = cost[tab.basis[i]];
        if cb != 0.0 {
            for (v, r) in zrow.iter_mut().zip(&tab.t[i]) {
                *v -= cb * r;
            }
        }
    }
    tab.t[m2] = zrow;
    if !tab.run(n_struct, max_iter) {
        return LpOutcome::non_optimal(LpStatus::Unbounded, n);
    }

    let mut y = vec![0.0; ncols];
    for i in 0..m2 {
        y[tab.basis[i]] = tab.t[i][ncols];
    }
    let point = DVector::from_iterator(n, (0..n).map(|j| y[j] - y[n + j]));
    let value = obj.dot(&point);
    LpOutcome {
        status: LpStatus::Optimal,
        point,
        value,
    }
}
