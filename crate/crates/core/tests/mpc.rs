mod common;

use common::*;
use mpcgrad::invariant::max_control_invariant;
use mpcgrad::mpc::{closed_loop, solve_qp, MpcPolicy, QpOptions, QpStatus};
use mpcgrad::poly::HPolytope;
use mpcgrad::sampler::sample_states;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c_inf() -> HPolytope {
    let p = double_integrator();
    max_control_invariant(&p.x_set, &p.u_set, &p.system.a, &p.system.b, 100)
        .unwrap()
        .c_inf
}

fn random_qp(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let nv = rng.gen_range(1..=3);
    let rows = rng.gen_range(1..=8);
    let m = DMatrix::from_fn(nv, nv, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(nv, nv) * 0.1;
    let q = DVector::from_fn(nv, |_, _| rng.gen_range(-3.0..3.0));
    let g = DMatrix::from_fn(rows, nv, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(rows, |_, _| rng.gen_range(-1.0..1.5));
    (h, q, g, b)
}

#[test]
fn double_integrator_matches_enumeration() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    for x in sample_states(&c_inf(), 200, 41).unwrap() {
        let u = qp.control_law(&x).unwrap();
        let oracle = enumerate_u0(&qp, &x).expect("states in the invariant set are feasible");
        assert!((u - oracle).amax() < 1e-6, "x = {x}");
    }
}

#[test]
fn fuzzed_qps_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut infeasible = 0;
    for case in 0..5000 {
        let (h, q, g, b) = random_qp(&mut rng);
        let sol = solve_qp(&h, &q, &g, &b, &QpOptions::default()).unwrap();
        match enumerate_qp(&h, &q, &g, &b) {
            None => {
                assert_eq!(sol.status, QpStatus::Infeasible, "case {case}");
                infeasible += 1;
            }
            Some(z) => {
                assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
                assert!((sol.z - z).amax() < 1e-6, "case {case}");
            }
        }
    }
    assert!(infeasible > 0 && infeasible < 5000, "{infeasible} infeasible cases");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn kkt_residuals_small(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, q, g, b) = random_qp(&mut rng);
        let sol = solve_qp(&h, &q, &g, &b, &QpOptions::default()).unwrap();
        if sol.status == QpStatus::Optimal {
            let (st, pr, co) = kkt_residuals(&h, &q, &g, &b, &sol.z, &sol.multipliers);
            prop_assert!(st <= 1e-6 && pr <= 1e-6 && co <= 1e-6, "{st} {pr} {co}");
            prop_assert!(sol.multipliers.iter().all(|l| *l >= -1e-9));
        }
    }

    #[test]
    fn law_is_odd_with_even_sensitivity(x1 in -3.0f64..3.0, x2 in -2.0f64..2.0) {
        let qp = double_integrator().condense().unwrap();
        let x = v(&[x1, x2]);
        let (Ok(sp), Ok(sm)) = (qp.solve(&x), qp.solve(&-&x)) else { return Ok(()) };
        prop_assume!(sp.status == QpStatus::Optimal);
        prop_assert_eq!(sm.status, QpStatus::Optimal);
        prop_assert!((&sp.u0 + &sm.u0).amax() < 1e-9);
        if !sp.on_boundary && !sm.on_boundary {
            let gp = qp.sensitivity(&sp, &x).unwrap();
            let gm = qp.sensitivity(&sm, &-&x).unwrap();
            prop_assert!((gp - gm).amax() < 1e-9);
        }
    }
}

#[test]
fn identical_active_sets_give_identical_sensitivity() {
    let qp = double_integrator().condense().unwrap();
    let mut by_set: std::collections::HashMap<Vec<usize>, DMatrix<f64>> = Default::default();
    for x in sample_states(&c_inf(), 300, 5).unwrap() {
        let sol = qp.solve(&x).unwrap();
        if sol.on_boundary {
            continue;
        }
        let s = qp.sensitivity(&sol, &x).unwrap();
        if let Some(prev) = by_set.get(&sol.active_set) {
            assert!((prev - &s).amax() < 1e-9);
        } else {
            by_set.insert(sol.active_set.clone(), s);
        }
    }
    assert!(by_set.len() >= 2, "expected several pieces of the law");
}

#[test]
fn sensitivity_matches_finite_differences() {
    let qp = double_integrator().condense().unwrap();
    let f = |x: &DVector<f64>| qp.control_law(x).unwrap();
    let mut checked = 0;
    for x in sample_states(&c_inf(), 150, 77).unwrap() {
        let sol = qp.solve(&x).unwrap();
        if sol.on_boundary {
            continue;
        }
        let s = qp.sensitivity(&sol, &x).unwrap();
        assert!(max_rel_err(&s, &jacobian_fd(&f, &x, 1e-5)) < 1e-4, "x = {x}");
        checked += 1;
    }
    assert!(checked >= 100);
}

#[test]
fn saturated_states_return_bound_exactly() {
    let qp = double_integrator().condense().unwrap();
    let mut saturated = 0;
    for x in sample_states(&c_inf(), 300, 8).unwrap() {
        let sol = qp.solve(&x).unwrap();
        // Rows 12..18 are the input bounds; 12 and 13 act on u₀.
        if sol.active_set.iter().any(|&i| i == 12 || i == 13) {
            assert!((sol.u0[0].abs() - 2.0).abs() < 1e-12);
            saturated += 1;
        }
    }
    assert!(saturated > 0);
}

#[test]
fn law_is_continuous_along_a_sweep() {
    let qp = double_integrator().condense().unwrap();
    // Crosses from the saturated piece through the unconstrained one.
    let a = v(&[0.0, -3.5]);
    let b = v(&[0.0, 3.5]);
    let steps = 20_000;
    let mut prev = qp.control_law(&a).unwrap()[0];
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let x = &a + (&b - &a) * t;
        let u = qp.control_law(&x).unwrap()[0];
        // Largest slope of the law is about 1.24 per unit of x₂.
        assert!((u - prev).abs() < 1e-5 + 1.5 * 7.0 / steps as f64);
        prev = u;
    }
}

#[test]
fn true_law_keeps_trajectories_feasible() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    let policy = MpcPolicy::new(&qp);
    for x0 in sample_states(&c_inf(), 50, 3).unwrap() {
        let t = closed_loop(&p, &policy, &x0, 10).unwrap();
        assert_eq!(t.violations, 0, "x0 = {x0}");
    }
}

#[test]
fn outside_reachable_set_is_infeasible() {
    let qp = double_integrator().condense().unwrap();
    assert_eq!(qp.solve(&v(&[10.0, 10.0])).unwrap().status, QpStatus::Infeasible);
    assert!(qp.control_law(&v(&[10.0, 10.0])).is_err());
}
