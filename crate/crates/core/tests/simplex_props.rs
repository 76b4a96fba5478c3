mod common;

use common::{grid_lambda_oracle, max_abs_diff, sparsemax_closed_form};
use proptest::prelude::*;
use stardro::simplex::{
    entmax_project, exponentiated_gradient_step, mirror_ascent_step, DualVector, SimplexVector,
    TsallisOrder, PROJECTION_TOL,
};

fn order(a: f64) -> TsallisOrder {
    TsallisOrder::new(a).unwrap()
}

fn dual_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..=max_len)
}

fn simplex_point(len: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(0.01f64..1.0, len).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        SimplexVector::new(raw.into_iter().map(|x| x / total).collect()).unwrap()
    })
}

#[test]
fn grid_oracle_agrees_on_frozen_high_sparsity_case() {
    // Nine-coordinate dual vector at the default order.
    let u = [0.91, 0.84, 0.88, 0.79, 0.93, 0.86, 0.80, 0.90, 0.83];
    let (oracle_q, _) = grid_lambda_oracle(&u, 1.08);
    let projected = entmax_project(&DualVector(u.to_vec()), order(1.08), PROJECTION_TOL).unwrap();
    assert!(max_abs_diff(projected.q.as_slice(), &oracle_q) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_lands_on_simplex(u in dual_vec(9), alpha in prop::sample::select(vec![1.01, 1.05, 1.08, 1.2, 1.5, 2.0, 4.0])) {
        let p = entmax_project(&DualVector(u.clone()), order(alpha), PROJECTION_TOL).unwrap();
        let total: f64 = p.q.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        prop_assert!(p.q.as_slice().iter().all(|&x| x >= 0.0));
        for (x, z) in p.q.as_slice().iter().zip(&u) {
            if *z <= p.threshold {
                prop_assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn brute_force_equivalence(u in dual_vec(6), alpha in prop::sample::select(vec![1.05, 1.08, 1.2, 1.5, 2.0])) {
        let p = entmax_project(&DualVector(u.clone()), order(alpha), PROJECTION_TOL).unwrap();
        let (oracle_q, _) = grid_lambda_oracle(&u, alpha);
        prop_assert!(max_abs_diff(p.q.as_slice(), &oracle_q) < 1e-5);
    }

    #[test]
    fn sparsemax_matches_closed_form(u in dual_vec(8)) {
        let p = entmax_project(&DualVector(u.clone()), order(2.0), PROJECTION_TOL).unwrap();
        let (expected, lambda) = sparsemax_closed_form(&u);
        prop_assert!(max_abs_diff(p.q.as_slice(), &expected) < 1e-10);
        prop_assert!((p.threshold - lambda).abs() < 1e-10);
    }

    #[test]
    fn shift_invariance(u in dual_vec(8), c in -5.0f64..5.0, alpha in prop::sample::select(vec![1.08, 1.5, 2.0])) {
        let a = entmax_project(&DualVector(u.clone()), order(alpha), PROJECTION_TOL).unwrap();
        let shifted: Vec<f64> = u.iter().map(|z| z + c).collect();
        let b = entmax_project(&DualVector(shifted), order(alpha), PROJECTION_TOL).unwrap();
        prop_assert!(max_abs_diff(a.q.as_slice(), b.q.as_slice()) < 1e-8);
    }

    #[test]
    fn permutation_equivariance(u in dual_vec(8), seed in any::<u64>(), alpha in prop::sample::select(vec![1.08, 1.5, 2.0])) {
        let mut perm: Vec<usize> = (0..u.len()).collect();
        let mut state = seed | 1;
        for i in (1..perm.len()).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
        let a = entmax_project(&DualVector(u.clone()), order(alpha), PROJECTION_TOL).unwrap();
        let b = entmax_project(&DualVector(permuted), order(alpha), PROJECTION_TOL).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b.q[k] - a.q[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn support_shrinks_with_order(u in prop::collection::vec(-1.0f64..1.0, 2..9)) {
        let mut distinct = u.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        prop_assume!(distinct.len() == u.len());
        let mut previous = usize::MAX;
        for alpha in [1.02, 1.1, 1.5, 2.0, 4.0] {
            let p = entmax_project(&DualVector(u.clone()), order(alpha), PROJECTION_TOL).unwrap();
            let support = p.q.support_size();
            prop_assert!(support <= previous, "support grew at alpha {}", alpha);
            previous = support;
        }
    }

    #[test]
    fn softmax_limit(q in simplex_point(9), ascent in prop::collection::vec(0.0f64..2.0, 9), eta in 0.01f64..0.1) {
        let tsallis = mirror_ascent_step(&q, &ascent, order(1.01), eta).unwrap();
        let dense = exponentiated_gradient_step(&q, &ascent, eta).unwrap();
        prop_assert!(max_abs_diff(tsallis.as_slice(), dense.as_slice()) < 1e-3);
    }

    #[test]
    fn eg_keeps_support(q in simplex_point(5), losses in prop::collection::vec(-3.0f64..3.0, 5), eta in 0.0f64..2.0) {
        let next = exponentiated_gradient_step(&q, &losses, eta).unwrap();
        prop_assert!(next.as_slice().iter().all(|&x| x > 0.0));
        let total: f64 = next.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}
