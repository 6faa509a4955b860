//! Linear MPC: problem data, condensation into a dense parametric QP,
//! the active-set solve, and the derivative of the control law.

mod qp;
mod sim;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::poly::HPolytope;

pub use qp::{solve_qp, ControlSolution, QpOptions, QpStatus};
pub use sim::{closed_loop, FnPolicy, MpcPolicy, Policy, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    #[serde(rename = "A", with = "crate::matrix_json")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "crate::matrix_json")]
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dim("A columns (A must be square)", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dim("B rows", n, b.nrows()));
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidArgument("B must have at least one column".into()));
        }
        Ok(LinearSystem { a, b })
    }

    pub fn n_state(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_input(&self) -> usize {
        self.b.ncols()
    }

    /// `A x + B u`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Finite-horizon MPC with quadratic cost and polytopic constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcProblem {
    #[serde(flatten)]
    pub system: LinearSystem,
    #[serde(rename = "Q", with = "crate::matrix_json")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "crate::matrix_json")]
    pub r: DMatrix<f64>,
    #[serde(rename = "QN", with = "crate::matrix_json")]
    pub q_terminal: DMatrix<f64>,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "X")]
    pub x_set: HPolytope,
    #[serde(rename = "U")]
    pub u_set: HPolytope,
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(
            format!("{name} ({}x{}, must be {n}x{n})", m.nrows(), m.ncols()),
            n,
            if m.nrows() != n { m.nrows() } else { m.ncols() },
        ));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-9 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    Ok(())
}

impl MpcProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.system.n_state();
        let m = self.system.n_input();
        // Re-run the structural checks for deserialized systems.
        LinearSystem::new(self.system.a.clone(), self.system.b.clone())?;
        check_square("Q", &self.q, n)?;
        check_square("QN", &self.q_terminal, n)?;
        check_square("R", &self.r, m)?;
        if min_eigenvalue(&self.q) < -1e-9 {
            return Err(Error::InvalidArgument("Q is not positive semidefinite".into()));
        }
        if min_eigenvalue(&self.q_terminal) < -1e-9 {
            return Err(Error::InvalidArgument("QN is not positive semidefinite".into()));
        }
        if min_eigenvalue(&self.r) <= 1e-9 {
            return Err(Error::InvalidArgument("R is not positive definite".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon N must be at least 1".into()));
        }
        if self.x_set.dim() != n {
            return Err(Error::dim("state constraint set", n, self.x_set.dim()));
        }
        if self.u_set.dim() != m {
            return Err(Error::dim("input constraint set", m, self.u_set.dim()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: MpcProblem = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    /// SHA-256 of the compact JSON encoding; binds artifacts to the problem
    /// that produced them.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("problem serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Double integrator with `|x_i| ≤ 5`, `|u| ≤ 2`, `Q = Q_N = I`, `R = 10`, `N = 3`.
    pub fn double_integrator() -> Self {
        MpcProblem {
            system: LinearSystem {
                a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
                b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            },
            q: DMatrix::identity(2, 2),
            r: DMatrix::from_element(1, 1, 10.0),
            q_terminal: DMatrix::identity(2, 2),
            horizon: 3,
            x_set: HPolytope::bounding_box(&[-5.0, -5.0], &[5.0, 5.0]).expect("box"),
            u_set: HPolytope::bounding_box(&[-2.0], &[2.0]).expect("box"),
        }
    }

    /// Quadratic cost of a rolled-out trajectory: terminal term on the last
    /// state, stage terms on all earlier states and every input.
    pub fn trajectory_cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let t = inputs.len();
        let mut cost = 0.0;
        for k in 0..t {
            cost += states[k].dot(&(&self.q * &states[k])) + inputs[k].dot(&(&self.r * &inputs[k]));
        }
        cost + states[t].dot(&(&self.q_terminal * &states[t]))
    }

    /// Eliminates the states through the dynamics.
    ///
    /// With `U = (u₀, …, u_{N−1})` and predicted states `X = Φx + ΓU`, the
    /// objective becomes `2·(½UᵀHU + xᵀFU) + const(x)` where
    /// `H = ΓᵀQ̄Γ + R̄` and `F = ΦᵀQ̄Γ`. Constraints `x_k ∈ X` (k = 1..N) and
    /// `u_k ∈ U` (k = 0..N−1) become `G U ≤ w + S x`.
    pub fn condense(&self) -> Result<CondensedQp> {
        self.validate()?;
        let n = self.system.n_state();
        let m = self.system.n_input();
        let nh = self.horizon;
        let (a, b) = (&self.system.a, &self.system.b);

        // phi[k] = A^(k+1); gamma block (k, j) = A^(k-j) B for j ≤ k.
        let mut powers = vec![DMatrix::identity(n, n)];
        for k in 1..=nh {
            powers.push(a * &powers[k - 1]);
        }
        let mut phi = DMatrix::zeros(nh * n, n);
        let mut gamma = DMatrix::zeros(nh * n, nh * m);
        for k in 0..nh {
            phi.view_mut((k * n, 0), (n, n)).copy_from(&powers[k + 1]);
            for j in 0..=k {
                gamma
                    .view_mut((k * n, j * m), (n, m))
                    .copy_from(&(&powers[k - j] * b));
            }
        }
        let mut qbar = DMatrix::zeros(nh * n, nh * n);
        for k in 0..nh {
            let w = if k + 1 == nh { &self.q_terminal } else { &self.q };
            qbar.view_mut((k * n, k * n), (n, n)).copy_from(w);
        }
        let mut rbar = DMatrix::zeros(nh * m, nh * m);
        for k in 0..nh {
            rbar.view_mut((k * m, k * m), (m, m)).copy_from(&self.r);
        }
        let h = gamma.transpose() * &qbar * &gamma + rbar;
        let h = (&h + h.transpose()) * 0.5;
        let f = phi.transpose() * &qbar * &gamma;

        let (kx, ku) = (self.x_set.n_rows(), self.u_set.n_rows());
        let rows = nh * (kx + ku);
        let mut g = DMatrix::zeros(rows, nh * m);
        let mut w = DVector::zeros(rows);
        let mut s = DMatrix::zeros(rows, n);
        let mut r0 = 0;
        for k in 0..nh {
            let cx = self.x_set.c();
            g.view_mut((r0, 0), (kx, nh * m))
                .copy_from(&(cx * gamma.view((k * n, 0), (n, nh * m))));
            w.rows_mut(r0, kx).copy_from(self.x_set.d());
            s.view_mut((r0, 0), (kx, n))
                .copy_from(&(-(cx * phi.view((k * n, 0), (n, n)))));
            r0 += kx;
        }
        for k in 0..nh {
            g.view_mut((r0, k * m), (ku, m)).copy_from(self.u_set.c());
            w.rows_mut(r0, ku).copy_from(self.u_set.d());
            r0 += ku;
        }
        Ok(CondensedQp {
            h,
            f,
            g,
            w,
            s,
            n_state: n,
            n_input: m,
            horizon: nh,
        })
    }
}

/// `min_U ½UᵀHU + xᵀFU  s.t.  G U ≤ w + S x`, parameterized by the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQp {
    pub h: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub s: DMatrix<f64>,
    pub n_state: usize,
    pub n_input: usize,
    pub horizon: usize,
}

impl CondensedQp {
    pub fn n_vars(&self) -> usize {
        self.h.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>, u_seq: &DVector<f64>) -> f64 {
        0.5 * u_seq.dot(&(&self.h * u_seq)) + (x.transpose() * &self.f * u_seq)[(0, 0)]
    }

    /// Linear term `Fᵀx` and right-hand side `w + Sx` at state `x`.
    pub fn parametrize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.n_state {
            return Err(Error::dim("state", self.n_state, x.len()));
        }
        Ok((self.f.transpose() * x, &self.w + &self.s * x))
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<ControlSolution> {
        self.solve_with(x, &QpOptions::default())
    }

    pub fn solve_with(&self, x: &DVector<f64>, opts: &QpOptions) -> Result<ControlSolution> {
        let (lin, rhs) = self.parametrize(x)?;
        let sol = solve_qp(&self.h, &lin, &self.g, &rhs, opts)?;
        Ok(ControlSolution::from_qp(sol, self.n_input))
    }

    /// First optimal input `u*(x)`.
    pub fn control_law(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.control_law_with(x, &QpOptions::default())
    }

    pub fn control_law_with(&self, x: &DVector<f64>, opts: &QpOptions) -> Result<DVector<f64>> {
        let sol = self.solve_with(x, opts)?;
        match sol.status {
            QpStatus::Optimal => Ok(sol.u0),
            QpStatus::Infeasible => Err(Error::InfeasibleState {
                state: x.iter().copied().collect(),
            }),
        }
    }

    /// `∂u₀*/∂x` (m × n) from the linearized KKT system of the active set:
    /// `[[H, G_Aᵀ], [G_A, 0]] · [∂U/∂x; ∂λ_A/∂x] = [−Fᵀ; S_A]`.
    pub fn sensitivity(&self, sol: &ControlSolution, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.n_state {
            return Err(Error::dim("state", self.n_state, x.len()));
        }
        if sol.status != QpStatus::Optimal {
            return Err(Error::InfeasibleState {
                state: x.iter().copied().collect(),
            });
        }
        let nv = self.n_vars();
        let act = &sol.active_set;
        let k = act.len();
        let mut kkt = DMatrix::zeros(nv + k, nv + k);
        kkt.view_mut((0, 0), (nv, nv)).copy_from(&self.h);
        let mut rhs = DMatrix::zeros(nv + k, self.n_state);
        rhs.view_mut((0, 0), (nv, self.n_state))
            .copy_from(&(-self.f.transpose()));
        for (r, &i) in act.iter().enumerate() {
            for j in 0..nv {
                kkt[(nv + r, j)] = self.g[(i, j)];
                kkt[(j, nv + r)] = self.g[(i, j)];
            }
            rhs.row_mut(nv + r).copy_from(&self.s.row(i));
        }
        let lu = kkt.lu();
        let sol_mat = lu.solve(&rhs).ok_or_else(|| Error::Degenerate { active: act.clone() })?;
        if !sol_mat.iter().all(|v| v.is_finite()) {
            return Err(Error::Degenerate { active: act.clone() });
        }
        Ok(sol_mat.rows(0, self.n_input).into_owned())
    }
}
