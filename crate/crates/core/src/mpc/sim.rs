use nalgebra::DVector;

use super::{CondensedQp, MpcProblem, QpOptions};
use crate::error::Result;

/// A state-feedback law `x ↦ u`.
pub trait Policy {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// The exact MPC law, evaluated by solving the QP at every state.
pub struct MpcPolicy<'a> {
    pub qp: &'a CondensedQp,
    pub opts: QpOptions,
}

impl<'a> MpcPolicy<'a> {
    pub fn new(qp: &'a CondensedQp) -> Self {
        MpcPolicy {
            qp,
            opts: QpOptions::default(),
        }
    }
}

impl Policy for MpcPolicy<'_> {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.qp.control_law_with(x, &self.opts)
    }
}

/// Adapter for plain closures.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&DVector<f64>) -> DVector<f64>> Policy for FnPolicy<F> {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.0)(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `steps + 1` states starting at `x0`.
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// Steps whose input leaves the input set or whose successor leaves the state set.
    pub violations: usize,
}

/// Simulates `x(k+1) = A x(k) + B π(x(k))` for `steps` steps. Constraint
/// violations are counted, not treated as errors.
pub fn closed_loop(
    problem: &MpcProblem,
    policy: &dyn Policy,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Trajectory> {
    const TOL: f64 = 1e-7;
    let mut states = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(steps);
    let mut violations = 0;
    for k in 0..steps {
        let u = policy.act(&states[k])?;
        let next = problem.system.step(&states[k], &u);
        if !problem.u_set.contains(&u, TOL) || !problem.x_set.contains(&next, TOL) {
            violations += 1;
        }
        inputs.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        inputs,
        violations,
    })
}
