mod common;

use common::*;
use mpcgrad::dataset::{generate, Dataset, DatasetKind};
use mpcgrad::invariant::max_control_invariant;
use mpcgrad::mpc::QpStatus;
use mpcgrad::poly::HPolytope;
use mpcgrad::sampler::{hit_and_run, points_to_csv, SamplerConfig, Start};
use proptest::prelude::*;

fn c_inf() -> HPolytope {
    let p = double_integrator();
    max_control_invariant(&p.x_set, &p.u_set, &p.system.a, &p.system.b, 100)
        .unwrap()
        .c_inf
}

fn unit_square() -> HPolytope {
    HPolytope::bounding_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
}

fn chi_square_10x10(points: &[nalgebra::DVector<f64>]) -> f64 {
    let mut counts = [0usize; 100];
    for p in points {
        let i = ((p[0] * 10.0) as usize).min(9);
        let j = ((p[1] * 10.0) as usize).min(9);
        counts[i * 10 + j] += 1;
    }
    let e = points.len() as f64 / 100.0;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn two_sided_chain_is_uniform_on_the_square() {
    let mut cfg = SamplerConfig::new(11, 50_000);
    cfg.two_sided = true;
    let pts = hit_and_run(&unit_square(), &cfg).unwrap();
    let stat = chi_square_10x10(&pts);
    assert!(stat < chi_square_critical(99.0, 0.999), "chi-square {stat}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn one_sided_points_stay_inside(seed in any::<u64>()) {
        let ci = c_inf();
        let pts = hit_and_run(&ci, &SamplerConfig::new(seed, 300)).unwrap();
        for x in &pts {
            prop_assert!(ci.contains(x, 1e-9));
        }
    }

    #[test]
    fn two_sided_points_stay_inside(seed in any::<u64>()) {
        let ci = c_inf();
        let mut cfg = SamplerConfig::new(seed, 300);
        cfg.two_sided = true;
        for x in hit_and_run(&ci, &cfg).unwrap() {
            prop_assert!(ci.contains(&x, 1e-9));
        }
    }
}

#[test]
fn chain_starts_at_the_chebyshev_center() {
    let ci = c_inf();
    let pts = hit_and_run(&ci, &SamplerConfig::new(1, 2)).unwrap();
    let center = ci.chebyshev_center().unwrap().center;
    assert_eq!(pts[0], center);
}

#[test]
fn flat_polytope_is_rejected() {
    let flat = HPolytope::from_rows(2, &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]], &[0.0, 0.0, 1.0, 1.0])
        .unwrap();
    assert!(hit_and_run(&flat, &SamplerConfig::new(0, 10)).is_err());
    let mut cfg = SamplerConfig::new(0, 10);
    cfg.start = Start::Given(v(&[0.0, 0.5]));
    let pts = hit_and_run(&flat, &cfg).unwrap();
    assert!(pts.iter().all(|x| flat.contains(x, 1e-12)));
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let a = hit_and_run(&c_inf(), &SamplerConfig::new(9, 500)).unwrap();
    let b = hit_and_run(&c_inf(), &SamplerConfig::new(9, 500)).unwrap();
    assert_eq!(points_to_csv(&a, 2), points_to_csv(&b, 2));
    let text = points_to_csv(&a, 2);
    assert!(text.starts_with("x1,x2\n"));
    // Shortest round-trip decimals read back exactly.
    for (line, p) in text.lines().skip(1).zip(&a) {
        let vals: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(vals, p.as_slice());
    }
}

#[test]
fn every_invariant_sample_is_mpc_feasible() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    for x in hit_and_run(&c_inf(), &SamplerConfig::new(4, 1000)).unwrap() {
        assert_eq!(qp.solve(&x).unwrap().status, QpStatus::Optimal, "x = {x}");
    }
}

#[test]
fn dataset_labels_match_the_solver() {
    let p = double_integrator();
    let qp = p.condense().unwrap();
    let ds = generate(&p, &c_inf(), 60, 3, DatasetKind::Train).unwrap();
    assert_eq!(ds.len(), 60);
    for s in &ds.samples {
        let sol = qp.solve(&s.x).unwrap();
        assert_eq!(s.u, sol.u0);
        assert_eq!(s.on_boundary, sol.on_boundary);
        assert_eq!(s.u_grad, qp.sensitivity(&sol, &s.x).unwrap());
        let oracle = enumerate_u0(&qp, &s.x).unwrap();
        assert!((&s.u - oracle).amax() < 1e-6);
    }
}

#[test]
fn dataset_file_is_deterministic_and_round_trips() {
    let p = double_integrator();
    let ci = c_inf();
    let a = generate(&p, &ci, 100, 21, DatasetKind::Test).unwrap();
    let b = generate(&p, &ci, 100, 21, DatasetKind::Test).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.json");
    a.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, a);
    back.ensure_problem(&p).unwrap();
    assert_eq!(back.to_json(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn dataset_from_another_problem_is_refused() {
    let p = double_integrator();
    let ds = generate(&p, &c_inf(), 5, 1, DatasetKind::Train).unwrap();
    let mut other = p.clone();
    other.r[(0, 0)] = 1.0;
    assert!(ds.ensure_problem(&other).is_err());
}
