mod common;

use common::*;
use diffcloth::linalg::{factorize_spd, solve_general, LuFactorization};
use proptest::prelude::*;

#[test]
fn cholesky_matches_dense_oracle_on_random_spd() {
    let mut r = rng(1);
    let a = random_spd(&mut r, 50, 0.08);
    let f = factorize_spd(&to_sparse(&a)).unwrap();
    let b = random_vec(&mut r, 50);
    let x = f.solve(&b).unwrap();
    assert!(max_abs_diff(&x, &dense_solve(&a, &b)) <= 1e-9);
}

#[test]
fn prefactorized_solves_many_right_hand_sides() {
    let mut r = rng(2);
    let a = random_spd(&mut r, 60, 0.05);
    let sa = to_sparse(&a);
    let f = factorize_spd(&sa).unwrap();
    for _ in 0..100 {
        let b = random_vec(&mut r, 60);
        let x = f.solve(&b).unwrap();
        assert!(max_abs_diff(&x, &dense_solve(&a, &b)) <= 1e-9);
        let res = sa.mul_vec(&x);
        assert!(max_abs_diff(&res, &b) <= 1e-10 * (1.0 + norm_inf(&b)));
    }
}

#[test]
fn factorize_once_equals_refactorize_each_time() {
    let mut r = rng(3);
    let a = to_sparse(&random_spd(&mut r, 30, 0.1));
    let f = factorize_spd(&a).unwrap();
    for _ in 0..1000 {
        let b = random_vec(&mut r, 30);
        let once = f.solve(&b).unwrap();
        let fresh = factorize_spd(&a).unwrap().solve(&b).unwrap();
        assert!(max_abs_diff(&once, &fresh) <= 1e-12);
    }
}

#[test]
fn lu_matches_dense_oracle_on_random_nonsymmetric() {
    let mut r = rng(4);
    let a = random_sparse(&mut r, 50, 0.1);
    let b = random_vec(&mut r, 50);
    let x = solve_general(&to_sparse(&a), &b).unwrap();
    assert!(max_abs_diff(&x, &dense_solve(&a, &b)) <= 1e-8);
    let res = dense_matvec(&a, &x);
    assert!(max_abs_diff(&res, &b) <= 1e-8 * (1.0 + norm_inf(&b)));
}

#[test]
fn lu_handles_zero_diagonal_with_pivoting() {
    let mut r = rng(5);
    let n = 40;
    let mut a = random_sparse(&mut r, n, 0.15);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 0.0;
        row[(i + 1) % n] += 3.0;
    }
    let b = random_vec(&mut r, n);
    let lu = LuFactorization::factorize(&to_sparse(&a)).unwrap();
    let x = lu.solve(&b).unwrap();
    assert!(max_abs_diff(&dense_matvec(&a, &x), &b) <= 1e-8 * (1.0 + norm_inf(&b)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn spd_cholesky_and_lu_agree(seed in 0u64..10_000, n in 2usize..40) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, n, 0.1);
        let sa = to_sparse(&a);
        let b = random_vec(&mut r, n);
        let x1 = factorize_spd(&sa).unwrap().solve(&b).unwrap();
        let x2 = solve_general(&sa, &b).unwrap();
        prop_assert!(max_abs_diff(&x1, &x2) <= 1e-8);
    }
}
