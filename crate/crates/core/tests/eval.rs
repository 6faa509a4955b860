mod common;

use common::*;
use mpcgrad::dataset::{generate, DatasetKind};
use mpcgrad::eval::*;
use mpcgrad::invariant::max_control_invariant;
use mpcgrad::mpc::{closed_loop, FnPolicy, LinearSystem, MpcPolicy, MpcProblem};
use mpcgrad::poly::HPolytope;
use mpcgrad::sampler::sample_states;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn c_inf() -> HPolytope {
    let p = double_integrator();
    max_control_invariant(&p.x_set, &p.u_set, &p.system.a, &p.system.b, 100)
        .unwrap()
        .c_inf
}

proptest! {
    #[test]
    fn nmse_is_scale_covariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        c in 0.01f64..100.0,
    ) {
        let truths: Vec<_> = pairs.iter().map(|p| v(&[p.0])).collect();
        let preds: Vec<_> = pairs.iter().map(|p| v(&[p.1])).collect();
        prop_assume!(truths.iter().any(|t| t[0].abs() > 1e-3));
        let base = nmse(&preds, &truths).unwrap();
        let st: Vec<_> = truths.iter().map(|t| t * c).collect();
        let sp: Vec<_> = preds.iter().map(|p| p * c).collect();
        let scaled = nmse(&sp, &st).unwrap();
        prop_assert!((scaled.ratio - base.ratio).abs() <= 1e-12 * base.ratio.max(1.0));
    }
}

#[test]
fn hand_nmse() {
    let r = nmse(&[v(&[1.0]), v(&[1.0])], &[v(&[1.0]), v(&[2.0])]).unwrap();
    assert!((r.ratio - 0.2).abs() < 1e-15);
    assert!((r.db - 10.0 * 0.2f64.log10()).abs() < 1e-12);
    assert!((r.db + 6.9897).abs() < 1e-4);
    let zero = nmse(&[v(&[0.0]), v(&[0.0])], &[v(&[1.0]), v(&[2.0])]).unwrap();
    assert_eq!(zero.db, 0.0);
    assert!(nmse(&[v(&[1.0])], &[v(&[0.0])]).is_err());
}

#[test]
fn zero_controller_on_identity_system_costs_two() {
    let p = MpcProblem {
        system: LinearSystem::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap(),
        q: DMatrix::identity(2, 2),
        r: DMatrix::from_element(1, 1, 7.0),
        q_terminal: DMatrix::identity(2, 2),
        horizon: 1,
        x_set: HPolytope::bounding_box(&[-5.0, -5.0], &[5.0, 5.0]).unwrap(),
        u_set: HPolytope::bounding_box(&[-1.0], &[1.0]).unwrap(),
    };
    let zero = FnPolicy(|_: &DVector<f64>| DVector::zeros(1));
    let traj = closed_loop(&p, &zero, &v(&[0.3, -1.2]), 1).unwrap();
    assert!((control_cost(&traj, &p).unwrap() - 2.0).abs() < 1e-12);
    let still = closed_loop(&p, &zero, &v(&[0.0, 0.0]), 1).unwrap();
    assert!(control_cost(&still, &p).is_err());
}

#[test]
fn true_law_as_surrogate_is_perfect() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    let ci = c_inf();
    let test = generate(&p, &ci, 100, 12, DatasetKind::Test).unwrap();
    let mpc = MpcPolicy::new(&qp);
    let (n, cost) = evaluate_surrogate(&mpc, &test, &p, &ci, 100, 3, 5).unwrap();
    assert!(n.perfect && n.db == f64::NEG_INFINITY);
    // The chain starts at the origin, which the guard drops.
    assert_eq!(cost.excluded, 1);
    assert_eq!(cost.per_trajectory.len(), 99);
    let starts = sample_states(&ci, 100, 5).unwrap();
    let direct = cost_over_states(&mpc, &p, &starts, 3).unwrap();
    assert_eq!(direct.mean, cost.mean);
    assert_eq!(cost.violations, 0);
}

/// Cost of applying the whole optimal input sequence from `x0` open loop.
fn open_loop_optimum(p: &MpcProblem, x0: &DVector<f64>) -> f64 {
    let qp = p.condense().unwrap();
    let sol = qp.solve(x0).unwrap();
    let m = p.system.n_input();
    let mut states = vec![x0.clone()];
    let mut inputs = Vec::new();
    for k in 0..p.horizon {
        let u = sol.u_seq.rows(k * m, m).into_owned();
        states.push(p.system.step(states.last().unwrap(), &u));
        inputs.push(u);
    }
    p.trajectory_cost(&states, &inputs) / x0.norm_squared()
}

#[test]
fn true_law_is_no_worse_than_a_perturbed_law() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    let mpc = MpcPolicy::new(&qp);
    // Outside the feasible region the detuned law falls back to zero input.
    let detuned = FnPolicy(|x: &DVector<f64>| {
        let u = qp.control_law(x).map_or(0.0, |u| u[0]);
        v(&[(0.8 * u - 0.05 * x[1]).clamp(-2.0, 2.0)])
    });
    let starts: Vec<_> = sample_states(&c_inf(), 200, 9)
        .unwrap()
        .into_iter()
        .filter(|x| x.norm() >= ZERO_STATE_TOL)
        .collect();
    let a = cost_over_states(&mpc, &p, &starts, p.horizon).unwrap();
    let b = cost_over_states(&detuned, &p, &starts, p.horizon).unwrap();
    // Receding horizon re-solves are not pathwise optimal, so the pathwise
    // bound is the open-loop optimum over the same three steps.
    let mut compared = 0;
    for (i, x0) in starts.iter().enumerate() {
        let best = open_loop_optimum(&p, x0);
        assert!(best <= a.per_trajectory[i] + 1e-9, "x0 = {x0}");
        if closed_loop(&p, &detuned, x0, p.horizon).unwrap().violations == 0 {
            assert!(best <= b.per_trajectory[i] + 1e-9, "x0 = {x0}");
            compared += 1;
        }
    }
    assert!(compared > 100);
}

#[test]
fn ls_demo_matches_predicted_covariance() {
    let r = gradient_ls_demo(100, 1.0, 1.0, -0.5, 0.3, 10_000, 1).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let pred = r.predicted_cov[(i, j)];
            assert!((r.empirical_cov[(i, j)] - pred).abs() <= 0.1 * pred.abs(), "entry ({i},{j})");
        }
    }
    assert!(r.max_l2_identity_error < 1e-12);
    assert!((r.predicted_cov - nalgebra::Matrix2::new(0.01, -0.01, -0.01, 0.02)).amax() < 1e-15);
}

#[test]
fn slope_estimate_has_lower_variance() {
    for &(le, lv) in &[(1.0, 1.0), (0.1, 2.0), (3.0, 0.5), (1.0, 10.0)] {
        let r = gradient_ls_demo(50, le, lv, 1.0, -1.0, 4000, 3).unwrap();
        assert!(r.empirical_cov[(0, 0)] <= r.empirical_cov[(1, 1)], "λe {le} λv {lv}");
    }
}

#[test]
fn general_covariance_reduces_to_the_unit_input_case() {
    let xs = vec![1.0; 100];
    let cov = ls_covariance(&xs, 1.0, 1.0).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[0.01, -0.01, -0.01, 0.02]);
    assert!((cov - expect).amax() < 1e-15);
    // Vanishing derivative noise pins the slope.
    let tight = ls_covariance(&xs, 1.0, 1e-9).unwrap();
    assert!(tight[(0, 0)] < 1e-10);
}
