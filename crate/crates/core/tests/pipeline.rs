use std::sync::Arc;

use htsoft::reference::{dense_solve, expsum_inverse, expsum_terms, Reference};
use htsoft::shrinkage::soft_threshold;
use htsoft::solver::{ie_solve_with, st_solve};
use htsoft::validate::random_case;
use htsoft::{DimensionTree, HTensor, KronSumOperator, SolverConfig, Truncation};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ones(tree: DimensionTree, n: usize) -> HTensor {
    let d = tree.order();
    HTensor::rank_one(Arc::new(tree), &vec![DVector::from_element(n, 1.0); d]).unwrap()
}

#[test]
fn expsum_agrees_with_dense_solve() {
    let a = KronSumOperator::laplacian(2, 3, None).unwrap();
    let f = ones(DimensionTree::linear(2).unwrap(), 3);
    let dense = Reference::Dense(dense_solve(&a, &f).unwrap());
    let j = expsum_terms(&a.bounds(), 1e-8).unwrap();
    let approx = expsum_inverse(&a, &f, j).unwrap();
    assert!(dense.error(&approx).unwrap() <= 1e-6 * dense.norm());
    assert!(approx.max_rank() <= j);
}

#[test]
fn tree_shape_does_not_change_the_solution() {
    let a = KronSumOperator::synthetic(4, 3, 5.0).unwrap();
    let eps = 1e-6;
    let cfg = SolverConfig::for_operator(&a, eps).unwrap();
    let (u_lin, _) = st_solve(&a, &ones(DimensionTree::linear(4).unwrap(), 3), &cfg).unwrap();
    let f_bal = ones(DimensionTree::balanced(4).unwrap(), 3);
    let (u_bal, _) = st_solve(&a, &f_bal, &cfg).unwrap();
    let dense = Reference::Dense(dense_solve(&a, &f_bal).unwrap());
    assert!(dense.error(&u_bal).unwrap() <= eps);
    let x_lin = u_lin.to_dense().unwrap();
    let x_bal = u_bal.to_dense().unwrap();
    let gap = (&x_lin - &x_bal).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(gap <= 2.0 * eps);
}

#[test]
fn inexact_trace_errors_respect_residual_bound() {
    let a = KronSumOperator::laplacian(3, 4, None).unwrap();
    let f = ones(DimensionTree::balanced(3).unwrap(), 4);
    let cfg = SolverConfig::for_operator(&a, 1e-5).unwrap();
    let dense = Reference::Dense(dense_solve(&a, &f).unwrap());
    let probe = |u: &HTensor| dense.error(u).ok();
    let (u, trace) = ie_solve_with(&a, &f, &cfg, &probe).unwrap();
    for rec in trace.records() {
        let bound = (rec.res_norm + rec.delta.unwrap()) / cfg.gamma;
        assert!(rec.err_ref.unwrap() <= bound * (1.0 + 1e-10), "{rec:?}");
    }
    assert!(dense.error(&u).unwrap() <= 1e-5);
}

#[test]
fn truncating_a_solution_meets_tolerance() {
    let a = KronSumOperator::laplacian(5, 6, None).unwrap();
    let f = ones(DimensionTree::balanced(5).unwrap(), 6);
    let j = expsum_terms(&a.bounds(), 1e-10).unwrap();
    let x = expsum_inverse(&a, &f, j).unwrap();
    for tol in [1e-2, 1e-4, 1e-6] {
        let t = x.hard_truncate_certified(&Truncation::Tolerance(tol * x.norm()));
        assert!(t.tensor.distance(&x).unwrap() <= tol * x.norm());
        assert!(t.tensor.max_rank() <= x.max_rank());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn thresholding_is_positively_homogeneous(seed in any::<u64>(), c in 0.1f64..10.0, frac in 0.001f64..1.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let u = random_case(&mut r).unwrap();
        let alpha = frac * u.norm();
        let lhs = soft_threshold(&u.scale(c), c * alpha);
        let rhs = soft_threshold(&u, alpha).scale(c);
        prop_assert!(lhs.distance(&rhs).unwrap() <= 1e-10 * c);
    }

    #[test]
    fn thresholding_never_grows_the_norm(seed in any::<u64>(), frac in 0.0f64..1.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let u = random_case(&mut r).unwrap();
        prop_assert!(soft_threshold(&u, frac).norm() <= u.norm() * (1.0 + 1e-12));
    }
}
