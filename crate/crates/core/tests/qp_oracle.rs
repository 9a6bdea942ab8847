mod common;

use mprio_core::qp::{kkt_residual, nnls, solve_qp, QpProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_against_enumeration(p: &QpProblem, with_box: bool) {
    let sol = solve_qp(p, 1e-9, 10_000).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let (x_ref, f_ref) = common::enumerate_qp(p, with_box);
    let f = p.objective(&sol.x);
    assert!((f - f_ref).abs() <= 1e-6, "objective {f} vs oracle {f_ref}");
    assert!((&sol.x - &x_ref).amax() <= 1e-4, "{} vs {}", sol.x, x_ref);
    let r = kkt_residual(p, &sol.x);
    assert!(
        r.stationarity <= 1e-6 && r.primal <= 1e-6 && r.complementarity <= 1e-6,
        "{r:?}"
    );
}

#[test]
fn small_boxed_problems_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(0..=4);
        let p = common::random_qp(&mut rng, n, m, true);
        check_against_enumeration(&p, true);
    }
}

#[test]
fn larger_problems_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut done = 0;
    while done < 25 {
        let n = rng.random_range(7..=20);
        let m = rng.random_range(1..=8);
        let p = common::random_qp(&mut rng, n, m, false);
        let (x_ref, _) = common::enumerate_qp(&p, false);
        if x_ref.amax() > 100.0 {
            continue;
        }
        check_against_enumeration(&p, false);
        done += 1;
    }
}

#[test]
fn semidefinite_hessian_uses_the_fallback() {
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
    let g = DVector::from_vec(vec![-0.3, 1.0, -1.0]);
    let p = QpProblem::boxed(h, g, DVector::from_element(3, -1.0), DVector::from_element(3, 1.0));
    let sol = solve_qp(&p, 1e-9, 20_000).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    let expected = DVector::from_vec(vec![0.3, -1.0, 1.0]);
    assert!((&sol.x - &expected).amax() < 1e-6, "{}", sol.x);
}

#[test]
fn linear_program_in_a_box() {
    let n = 4;
    let mut p = QpProblem::boxed(
        DMatrix::zeros(n, n),
        DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
        DVector::zeros(n),
        DVector::from_element(n, 2.0),
    );
    p.push_inequality(&DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]), 2.0);
    p.push_inequality(&DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]), 1.0);
    let sol = solve_qp(&p, 1e-9, 20_000).unwrap();
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((p.objective(&sol.x) - 2.0).abs() < 1e-6, "{}", sol.x);
    assert!(p.max_violation(&sol.x) < 1e-6);
}

#[test]
fn contradictory_rows_are_infeasible() {
    let mut p = QpProblem::boxed(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DVector::from_element(2, -1.0),
        DVector::from_element(2, 1.0),
    );
    p.push_inequality(&DVector::from_vec(vec![1.0, 1.0]), 3.0);
    let sol = solve_qp(&p, 1e-9, 5_000).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let mut p = QpProblem::boxed(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DVector::zeros(2),
        DVector::zeros(2),
    );
    p.lb = DVector::zeros(3);
    assert!(solve_qp(&p, 1e-9, 100).is_err());
}

#[test]
fn nnls_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (rows, cols) = (rng.random_range(3..8), rng.random_range(1..5));
        let a = DMatrix::from_fn(rows, cols, |_, _| common::normal(&mut rng));
        let b = DVector::from_fn(rows, |_, _| common::normal(&mut rng));
        let x = nnls(&a, &b);
        assert!(x.iter().all(|v| *v >= 0.0));
        let h = a.transpose() * &a + DMatrix::identity(cols, cols) * 1e-12;
        let p = QpProblem::boxed(
            h,
            -(a.transpose() * &b),
            DVector::zeros(cols),
            DVector::from_element(cols, 1e6),
        );
        let (x_ref, _) = common::enumerate_qp(&p, true);
        assert!((&x - &x_ref).amax() < 1e-6, "{x} vs {x_ref}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_are_feasible_and_stationary(seed in any::<u64>(), n in 1usize..12, m in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_qp(&mut rng, n, m, true);
        let sol = solve_qp(&p, 1e-9, 10_000).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let r = kkt_residual(&p, &sol.x);
        prop_assert!(r.primal <= 1e-6, "{:?}", r);
        prop_assert!(r.stationarity <= 1e-6, "{:?}", r);
        prop_assert!(r.complementarity <= 1e-6, "{:?}", r);
    }
}
