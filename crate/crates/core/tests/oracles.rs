//! Cross-checks against independent computations: dense linear solves, a
//! generic LP solver for transport costs, and the lifted MDP.

use bisimlab::bisim::{
    build_lifted_mdp, pi_bisim_fixed_point, scaled_fixed_point, value_difference_bound_check, wasserstein1,
    ScalingConfig, DEFAULT_LIFT_CAP,
};
use bisimlab::dataset::{collect, dataset_from_text, dataset_to_text, remove_transitions, RemovalRule};
use bisimlab::expectile::{expectile_fixed_point, ExpectileConfig};
use bisimlab::mdp::{make_garnet, mdp_from_text, mdp_to_text, policy_evaluation, stationary_distribution, Policy};
use bisimlab::rng;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng as _;

fn lp_transport(p: &[f64], q: &[f64], cost: &DMatrix<f64>) -> f64 {
    let n = p.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..n)
        .map(|i| (0..n).map(|j| lp.add_var(cost[(i, j)], (0.0, f64::INFINITY))).collect())
        .collect();
    for i in 0..n {
        let row: Vec<_> = (0..n).map(|j| (vars[i][j], 1.0)).collect();
        lp.add_constraint(&row, ComparisonOp::Eq, p[i]);
        let col: Vec<_> = (0..n).map(|j| (vars[j][i], 1.0)).collect();
        lp.add_constraint(&col, ComparisonOp::Eq, q[i]);
    }
    lp.solve().unwrap().objective()
}

fn simplex(n: usize, g: &mut rng::Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| g.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

#[test]
fn transport_matches_lp() {
    let mut g = rng::from_seed(17);
    for _ in 0..40 {
        let n = g.random_range(2..=7);
        let pts: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..3.0)).collect();
        let cost = DMatrix::from_fn(n, n, |i, j| (pts[i] - pts[j]).abs());
        let (p, q) = (simplex(n, &mut g), simplex(n, &mut g));
        let ours = wasserstein1(&p, &q, &cost).unwrap();
        assert!((ours - lp_transport(&p, &q, &cost)).abs() < 1e-7);
    }
}

#[test]
fn policy_evaluation_matches_linear_solve() {
    for seed in 0..10 {
        let mdp = make_garnet(6, 3, 3, 0.2, seed).unwrap();
        let pol = Policy::random(6, 3, &mut rng::from_seed(seed));
        let p = mdp.policy_matrix(&pol).unwrap();
        let r = DVector::from_vec(mdp.policy_reward(&pol).unwrap());
        let a = DMatrix::identity(6, 6) - p * mdp.discount();
        let exact = a.lu().solve(&r).unwrap();
        let v = policy_evaluation(&mdp, &pol, 1e-12).unwrap().v;
        for s in 0..6 {
            assert!((v[s] - exact[s]).abs() < 1e-9);
        }
    }
}

#[test]
fn stationary_distribution_is_invariant() {
    let mdp = make_garnet(7, 2, 3, 0.0, 4).unwrap();
    let pol = Policy::uniform(7, 2);
    let mu = stationary_distribution(&mdp, &pol, 1e-13).unwrap();
    let mut p = mdp.policy_matrix(&pol).unwrap();
    if mu.regularized {
        p = p * (1.0 - mu.restart_weight) + DMatrix::from_element(7, 7, mu.restart_weight / 7.0);
    }
    let next = p.transpose() * DVector::from_column_slice(&mu.mu);
    for s in 0..7 {
        assert!((next[s] - mu.mu[s]).abs() < 1e-9);
    }
}

#[test]
fn lifted_policy_evaluation_is_the_scaled_fixed_point() {
    for seed in 0..10 {
        let mdp = make_garnet(5, 2, 2, 0.0, seed).unwrap();
        let pol = Policy::random(5, 2, &mut rng::from_seed(seed + 100));
        let sc = ScalingConfig::new(0.3, 0.8).unwrap();
        let lifted = build_lifted_mdp(&mdp, &pol, sc, DEFAULT_LIFT_CAP).unwrap();
        let v = policy_evaluation(&lifted.mdp, &lifted.policy, 1e-12).unwrap();
        let g = scaled_fixed_point(&mdp, &pol, sc, 1e-12).unwrap();
        assert!((lifted.unmap(&v.v) - &g.g).amax() < 1e-8);
    }
}

#[test]
fn pi_bisim_dominates_value_gaps() {
    let mdp = make_garnet(6, 2, 3, 0.0, 9).unwrap();
    let pol = Policy::uniform(6, 2);
    let d = pi_bisim_fixed_point(&mdp, &pol, 1e-10).unwrap();
    let rep = value_difference_bound_check(&mdp, &pol, &d, ScalingConfig::standard(mdp.discount())).unwrap();
    assert_eq!(rep.violations, 0, "{rep:?}");
    assert!(d.is_symmetric() && d.triangle_violation() < 1e-8);
}

#[test]
fn symmetric_expectile_is_the_scaled_fixed_point() {
    let mdp = make_garnet(6, 2, 3, 0.0, 2).unwrap();
    let pol = Policy::uniform(6, 2);
    let cfg = ExpectileConfig { tol: 1e-11, ..Default::default() };
    let e = expectile_fixed_point(&mdp, &pol, &cfg).unwrap();
    let s = scaled_fixed_point(&mdp, &pol, cfg.scaling, 1e-12).unwrap();
    assert!(e.sup_distance(&s) < 1e-6);
}

#[test]
fn text_formats_round_trip() {
    let mdp = make_garnet(5, 2, 2, 0.1, 3).unwrap();
    assert_eq!(mdp_from_text(&mdp_to_text(&mdp)).unwrap(), mdp);
    let ds = collect(&mdp, &Policy::uniform(5, 2), 300, 20, 1).unwrap();
    let ds = remove_transitions(&ds, &RemovalRule::DropNextStates(vec![4]), 0).unwrap().minmax_normalize();
    let back = dataset_from_text(&dataset_to_text(&ds)).unwrap();
    assert_eq!(back.transitions(), ds.transitions());
    assert_eq!(back.normalization(), ds.normalization());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaled_fixed_point_is_a_bounded_diffuse_metric(seed in 0u64..10_000, c_r in 0.1f64..2.0, c_k in 0.0f64..0.95) {
        let mdp = make_garnet(5, 2, 3, 0.0, seed).unwrap();
        let pol = Policy::random(5, 2, &mut rng::from_seed(seed));
        let sc = ScalingConfig::new(c_r, c_k).unwrap();
        let g = scaled_fixed_point(&mdp, &pol, sc, 1e-12).unwrap();
        prop_assert!(g.max_entry() <= sc.bound(mdp.r_max() - mdp.r_min()) + 1e-9);
        prop_assert!(g.is_symmetric());
        prop_assert!(g.triangle_violation() <= 1e-9);
        // self-distances need not vanish under the independent coupling
        prop_assert!(g.g.iter().all(|&x| x >= 0.0));
    }
}
