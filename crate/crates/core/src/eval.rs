//! Surrogate quality metrics: NMSE against the exact law and the normalized
//! closed-loop cost `J`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mpc::{closed_loop, MpcProblem, Policy, Trajectory};
use crate::poly::HPolytope;
use crate::sampler;

/// Initial states closer to the origin than this are excluded from `J`.
pub const ZERO_STATE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseResult {
    pub ratio: f64,
    /// `10·log₁₀(ratio)`; `-inf` when `perfect`.
    pub db: f64,
    pub n_samples: usize,
    pub perfect: bool,
}

impl NmseResult {
    pub fn from_ratio(ratio: f64, n_samples: usize) -> Self {
        let perfect = ratio == 0.0;
        NmseResult {
            ratio,
            db: if perfect {
                f64::NEG_INFINITY
            } else {
                10.0 * ratio.log10()
            },
            n_samples,
            perfect,
        }
    }
}

/// `mean‖û − u‖² / mean‖u‖²`.
pub fn nmse(predictions: &[DVector<f64>], truths: &[DVector<f64>]) -> Result<NmseResult> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("predictions", truths.len(), predictions.len()));
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("NMSE needs at least one sample".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(Error::dim("prediction", t.len(), p.len()));
        }
        num += (p - t).norm_squared();
        den += t.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("NMSE is undefined when every target is zero".into()));
    }
    Ok(NmseResult::from_ratio(num / den, truths.len()))
}

/// Trajectory cost with the final simulated state as terminal state,
/// divided by `x(0)ᵀx(0)`.
pub fn control_cost(traj: &Trajectory, problem: &MpcProblem) -> Result<f64> {
    let x0 = &traj.states[0];
    if x0.norm() < ZERO_STATE_TOL {
        return Err(Error::ZeroInitialState);
    }
    Ok(problem.trajectory_cost(&traj.states, &traj.inputs) / x0.norm_squared())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostResult {
    pub per_trajectory: Vec<f64>,
    pub mean: f64,
    /// Constraint-violating steps summed over all trajectories.
    pub violations: usize,
    /// Initial states dropped by the zero-state guard.
    pub excluded: usize,
}

/// Simulates `policy` from every initial state for `steps` steps.
pub fn cost_over_states(
    policy: &dyn Policy,
    problem: &MpcProblem,
    initial_states: &[DVector<f64>],
    steps: usize,
) -> Result<CostResult> {
    let mut per_trajectory = Vec::with_capacity(initial_states.len());
    let mut violations = 0;
    let mut excluded = 0;
    for x0 in initial_states {
        let traj = closed_loop(problem, policy, x0, steps)?;
        match control_cost(&traj, problem) {
            Ok(j) => {
                per_trajectory.push(j);
                violations += traj.violations;
            }
            Err(Error::ZeroInitialState) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if per_trajectory.is_empty() {
        return Err(Error::UndefinedMetric("every initial state was excluded".into()));
    }
    let mean = per_trajectory.iter().sum::<f64>() / per_trajectory.len() as f64;
    Ok(CostResult {
        per_trajectory,
        mean,
        violations,
        excluded,
    })
}

/// NMSE of `policy` on the test set's `(x, u)` pairs.
pub fn nmse_on_dataset(policy: &dyn Policy, test_ds: &Dataset) -> Result<NmseResult> {
    let preds = test_ds
        .samples
        .iter()
        .map(|s| policy.act(&s.x))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<DVector<f64>> = test_ds.samples.iter().map(|s| s.u.clone()).collect();
    nmse(&preds, &truths)
}

/// NMSE on the test set plus `J` over `n_traj` hit-and-run initial states
/// drawn from `c_inf` with `seed`.
pub fn evaluate_surrogate(
    policy: &dyn Policy,
    test_ds: &Dataset,
    problem: &MpcProblem,
    c_inf: &HPolytope,
    n_traj: usize,
    steps: usize,
    seed: u64,
) -> Result<(NmseResult, CostResult)> {
    test_ds.ensure_problem(problem)?;
    let nmse = nmse_on_dataset(policy, test_ds)?;
    let starts = sampler::sample_states(c_inf, n_traj, seed)?;
    let cost = cost_over_states(policy, problem, &starts, steps)?;
    Ok((nmse, cost))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsDemoResult {
    /// Sample covariance of `(l̂₁, l̂₂)` over the repetitions.
    pub empirical_cov: Matrix2<f64>,
    /// `(1/N)·[[λ_v, −λ_v], [−λ_v, λ_e + λ_v]]`.
    pub predicted_cov: Matrix2<f64>,
    pub mean_estimate: Vector2<f64>,
    /// Largest `|l̂₂ − mean(u_k − u'_k)|` over the repetitions.
    pub max_l2_identity_error: f64,
}

/// Monte Carlo of the scalar feedback identification problem with value and
/// derivative measurements at `x_k = 1`, solved by weighted least squares.
pub fn gradient_ls_demo(
    n: usize,
    lambda_e: f64,
    lambda_v: f64,
    l1: f64,
    l2: f64,
    reps: usize,
    seed: u64,
) -> Result<LsDemoResult> {
    if n == 0 || reps < 2 {
        return Err(Error::InvalidArgument("need n ≥ 1 and at least 2 repetitions".into()));
    }
    if !(lambda_e > 0.0 && lambda_v > 0.0) {
        return Err(Error::InvalidArgument("noise variances must be positive".into()));
    }
    let e_dist = Normal::new(0.0, lambda_e.sqrt()).expect("positive std");
    let v_dist = Normal::new(0.0, lambda_v.sqrt()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = 1.0;
    let nf = n as f64;

    // Normal equations of V(l₁, l₂); the matrix is fixed because x_k is.
    let normal = Matrix2::new(
        nf * x * x / lambda_e + nf / lambda_v,
        nf * x / lambda_e,
        nf * x / lambda_e,
        nf / lambda_e,
    );
    let normal_inv = normal.try_inverse().expect("nonsingular for positive variances");

    let mut estimates = Vec::with_capacity(reps);
    let mut max_err: f64 = 0.0;
    for _ in 0..reps {
        let mut rhs = Vector2::zeros();
        let mut diff_sum = 0.0;
        for _ in 0..n {
            let u = l1 * x + l2 + e_dist.sample(&mut rng);
            let du = l1 + v_dist.sample(&mut rng);
            rhs[0] += x * u / lambda_e + du / lambda_v;
            rhs[1] += u / lambda_e;
            diff_sum += u - du;
        }
        let est = normal_inv * rhs;
        max_err = max_err.max((est[1] - diff_sum / nf).abs());
        estimates.push(est);
    }

    let mean = estimates.iter().sum::<Vector2<f64>>() / reps as f64;
    let mut cov = Matrix2::zeros();
    for e in &estimates {
        let d = e - mean;
        cov += d * d.transpose();
    }
    cov /= (reps - 1) as f64;
    let predicted_cov = Matrix2::new(lambda_v, -lambda_v, -lambda_v, lambda_e + lambda_v) / nf;
    Ok(LsDemoResult {
        empirical_cov: cov,
        predicted_cov,
        mean_estimate: mean,
        max_l2_identity_error: max_err,
    })
}

/// `(λ_e/N)·[(1/N)Σ [[x_k² + λ_e/λ_v, x_k], [x_k, 1]]]⁻¹` for arbitrary inputs.
pub fn ls_covariance(xs: &[f64], lambda_e: f64, lambda_v: f64) -> Option<DMatrix<f64>> {
    let nf = xs.len() as f64;
    let mut m = DMatrix::zeros(2, 2);
    for &x in xs {
        m[(0, 0)] += x * x + lambda_e / lambda_v;
        m[(0, 1)] += x;
        m[(1, 0)] += x;
        m[(1, 1)] += 1.0;
    }
    m /= nf;
    m.try_inverse().map(|inv| inv * (lambda_e / nf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{FnPolicy, LinearSystem};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn nmse_hand_cases() {
        let truths = [v(&[1.0]), v(&[2.0])];
        let r = nmse(&[v(&[1.0]), v(&[1.0])], &truths).unwrap();
        assert!((r.ratio - 0.2).abs() < 1e-15);
        assert!((r.db - (-6.989_700_043_360_188)).abs() < 1e-9);
        let r = nmse(&truths, &truths).unwrap();
        assert!(r.perfect && r.db == f64::NEG_INFINITY);
        let r = nmse(&[v(&[0.0]), v(&[0.0])], &truths).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.db, 0.0);
        assert!(matches!(
            nmse(&truths, &[v(&[0.0]), v(&[0.0])]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn identity_problem() -> MpcProblem {
        let mut p = MpcProblem::double_integrator();
        p.system = LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        p.q = DMatrix::identity(2, 2);
        p.q_terminal = DMatrix::identity(2, 2);
        p.horizon = 1;
        p
    }

    #[test]
    fn zero_controller_cost_is_two() {
        let p = identity_problem();
        let zero = FnPolicy(|_: &DVector<f64>| DVector::zeros(1));
        let t = closed_loop(&p, &zero, &v(&[0.3, -0.4]), 1).unwrap();
        assert!((control_cost(&t, &p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_initial_state_is_excluded() {
        let p = identity_problem();
        let zero = FnPolicy(|_: &DVector<f64>| DVector::zeros(1));
        let t = closed_loop(&p, &zero, &v(&[0.0, 0.0]), 1).unwrap();
        assert!(matches!(control_cost(&t, &p), Err(Error::ZeroInitialState)));
        let r = cost_over_states(&zero, &p, &[v(&[0.0, 0.0]), v(&[1.0, 0.0])], 1).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.per_trajectory.len(), 1);
    }

    #[test]
    fn ls_demo_identity_and_limit() {
        let r = gradient_ls_demo(50, 1.0, 1e-8, 0.7, -0.2, 400, 3).unwrap();
        assert!(r.max_l2_identity_error < 1e-12);
        assert!(r.empirical_cov[(0, 0)] < 1e-8);
    }

    #[test]
    fn ls_covariance_matches_special_case() {
        let xs = vec![1.0; 100];
        let c = ls_covariance(&xs, 1.0, 1.0).unwrap();
        assert!((c[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((c[(0, 1)] + 0.01).abs() < 1e-15);
        assert!((c[(1, 1)] - 0.02).abs() < 1e-15);
    }
}
