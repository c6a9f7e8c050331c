mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use common::{hamiltonian_oracle, random_care_instance, spectral_abscissa, stabilizability_margin};
use sdre_ident::riccati::{
    care_residual, gain_from, gain_on_subspace, solve_care, CareFailure, CareStatus, CostWeights, RiccatiSolution,
    DEFAULT_TOL,
};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 100,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x00ca_e5ee),
        ..ProptestConfig::default()
    }
}

fn natural_scale(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, pi: &DMatrix<f64>) -> f64 {
    let s = b * r.clone().try_inverse().unwrap() * b.transpose();
    q.norm() + 2.0 * (a.transpose() * pi).norm() + (pi * s * pi).norm()
}

proptest! {
    #![proptest_config(config())]

    /// Instances whose PBH margin is at least 0.1 and whose stabilizing
    /// solution stays below 1e3 entrywise. Beyond that size the rounding
    /// floor `eps ||Pi||^2 ||S||` of the residual itself approaches 1e-9.
    #[test]
    fn well_conditioned_instances_meet_the_residual_target(seed in any::<u64>(), d in 1usize..=8, m in 1usize..=3) {
        let (a, b, q, r) = random_care_instance(seed, d, m);
        prop_assume!(stabilizability_margin(&a, &b) >= 0.1);
        let oracle = hamiltonian_oracle(&a, &b, &q, &r).expect("oracle has a stable subspace");
        prop_assume!(oracle.amax() <= 1e3);

        let w = CostWeights::new(q.clone(), r.clone()).unwrap();
        let sol = solve_care(&a, &b, &w, DEFAULT_TOL).unwrap();
        prop_assert!(sol.is_solved(), "{:?}", sol.status);
        let scale = q.norm().max(1.0);
        prop_assert!(sol.residual <= DEFAULT_TOL * scale, "residual {:e}", sol.residual);
        prop_assert!(care_residual(&a, &b, &w, &sol.pi) <= DEFAULT_TOL * scale);
        prop_assert!((&sol.pi - sol.pi.transpose()).norm() <= 1e-9 * sol.pi.norm());
        prop_assert!(sol.pi.symmetric_eigenvalues().min() >= -1e-8 * sol.pi.norm());

        let k = gain_from(&sol, &b, &w);
        prop_assert!(!k.fallback);
        prop_assert!(spectral_abscissa(&(&a - &b * &k.k)) < 0.0);

        let gap = (&sol.pi - &oracle).amax() / oracle.amax().max(1.0);
        prop_assert!(gap <= 1e-6, "relative gap {gap:e}");
    }

    /// Any stabilizable instance with margin 0.1: a solution is found unless
    /// `Pi` is huge, and its residual is at rounding level relative to the
    /// size of the terms of the equation.
    #[test]
    fn stabilizable_instances_are_solved_to_rounding_level(seed in any::<u64>(), d in 1usize..=8, m in 1usize..=3) {
        let (a, b, q, r) = random_care_instance(seed, d, m);
        prop_assume!(stabilizability_margin(&a, &b) >= 0.1);
        let oracle = hamiltonian_oracle(&a, &b, &q, &r).expect("oracle has a stable subspace");
        let w = CostWeights::new(q.clone(), r.clone()).unwrap();
        let sol = solve_care(&a, &b, &w, DEFAULT_TOL).unwrap();
        if !sol.is_solved() {
            prop_assert!(oracle.amax() > 1e5, "{:?} with |Pi| = {:e}", sol.status, oracle.amax());
            return Ok(());
        }
        let relative = sol.residual / natural_scale(&a, &b, &q, &r, &sol.pi);
        prop_assert!(relative <= 1e-10, "relative residual {relative:e}");
        let k = gain_from(&sol, &b, &w);
        prop_assert!(spectral_abscissa(&(&a - &b * &k.k)) < 0.0);
        let gap = (&sol.pi - &oracle).amax() / oracle.amax().max(1.0);
        prop_assert!(gap <= 1e-6, "relative gap {gap:e}");
    }

    #[test]
    fn scaling_both_weights_scales_pi_and_keeps_k(seed in any::<u64>(), d in 1usize..=6, c in 0.1f64..10.0) {
        let (a, b, q, r) = random_care_instance(seed, d, 1);
        prop_assume!(stabilizability_margin(&a, &b) >= 0.1);
        let w1 = CostWeights::new(q.clone(), r.clone()).unwrap();
        let w2 = CostWeights::new(q * c, r * c).unwrap();
        let s1 = solve_care(&a, &b, &w1, DEFAULT_TOL).unwrap();
        let s2 = solve_care(&a, &b, &w2, DEFAULT_TOL).unwrap();
        prop_assume!(s1.is_solved() && s1.pi.amax() <= 1e3);
        prop_assert!(s2.is_solved());
        prop_assert!((&s2.pi - &s1.pi * c).amax() <= 1e-7 * (s1.pi.amax() * c).max(1.0));
        let (k1, k2) = (gain_from(&s1, &b, &w1), gain_from(&s2, &b, &w2));
        prop_assert!((&k1.k - &k2.k).amax() <= 1e-7 * k1.k.amax().max(1.0));
    }
}

#[test]
fn double_integrator_matches_the_oracle() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let q = DMatrix::identity(2, 2);
    let r = DMatrix::identity(1, 1);
    let w = CostWeights::new(q.clone(), r.clone()).unwrap();
    let sol = solve_care(&a, &b, &w, DEFAULT_TOL).unwrap();
    let oracle = hamiltonian_oracle(&a, &b, &q, &r).unwrap();
    assert!((&sol.pi - &oracle).amax() <= 1e-8, "{} vs {}", sol.pi, oracle);
    // closed form: [[sqrt 3, 1], [1, sqrt 3]]
    let s3 = 3f64.sqrt();
    assert!((&sol.pi - DMatrix::from_row_slice(2, 2, &[s3, 1.0, 1.0, s3])).amax() <= 1e-10);
}

#[test]
fn ones_actuator_with_identity_pi_gives_scaled_gain() {
    let d = 5;
    let b = DMatrix::from_element(d, 1, 1.0);
    let w = CostWeights::scaled_identity(d, 1.0, 1, 0.01).unwrap();
    let sol =
        RiccatiSolution { pi: DMatrix::identity(d, d), residual: 0.0, status: CareStatus::Solved, refinements: 0 };
    let k = gain_from(&sol, &b, &w);
    assert!((k.k - b.transpose() * 100.0).amax() <= 1e-12);
}

#[test]
fn scalar_equation_has_the_closed_form_root() {
    // 2 a p - p^2 b^2 / r + q = 0, stabilizing root
    let (a, b, q, r) = (0.7, 1.3, 2.0, 0.5);
    let w = CostWeights::new(DMatrix::from_element(1, 1, q), DMatrix::from_element(1, 1, r)).unwrap();
    let sol = solve_care(&DMatrix::from_element(1, 1, a), &DMatrix::from_element(1, 1, b), &w, DEFAULT_TOL).unwrap();
    let expected = r * (a + (a * a + b * b * q / r).sqrt()) / (b * b);
    assert!((sol.pi[(0, 0)] - expected).abs() < 1e-12, "{} vs {expected}", sol.pi[(0, 0)]);
}

#[test]
fn decoupled_uncontrollable_unstable_mode_is_reported() {
    // x2 is unstable and untouched by the input
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.5]);
    let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let w = CostWeights::scaled_identity(2, 1.0, 1, 1.0).unwrap();
    let sol = solve_care(&a, &b, &w, DEFAULT_TOL).unwrap();
    assert!(!sol.is_solved());
    let k = gain_from(&sol, &b, &w);
    assert!(k.fallback);
    assert_eq!(k.k, DMatrix::zeros(1, 2));
}

#[test]
fn failure_reasons_serialize_with_a_tag() {
    let status = CareStatus::Failed(CareFailure::SingularBasis { condition: 1e13 });
    let json = serde_json::to_string(&status).unwrap();
    assert!(json.contains("singular-basis"), "{json}");
}

#[test]
fn subspace_gain_ignores_pinned_nodes() {
    let (a_in, b_in, q_in, r) = random_care_instance(7, 4, 1);
    let d = 6;
    let interior: Vec<usize> = (1..5).collect();
    let mut a = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, 1);
    let mut q = DMatrix::identity(d, d);
    for (ii, &i) in interior.iter().enumerate() {
        b[(i, 0)] = b_in[(ii, 0)];
        for (jj, &j) in interior.iter().enumerate() {
            a[(i, j)] = a_in[(ii, jj)];
            q[(i, j)] = q_in[(ii, jj)];
        }
    }
    let w = CostWeights::new(q, r.clone()).unwrap();
    let synth = gain_on_subspace(&a, &b, &w, &interior, DEFAULT_TOL).unwrap();
    assert!(synth.solution.is_solved());
    assert_eq!(synth.gain.k[(0, 0)], 0.0);
    assert_eq!(synth.gain.k[(0, d - 1)], 0.0);

    let oracle = hamiltonian_oracle(&a_in, &b_in, &q_in, &r).unwrap();
    let k_oracle = r.try_inverse().unwrap() * b_in.transpose() * oracle;
    for (ii, &i) in interior.iter().enumerate() {
        assert!((synth.gain.k[(0, i)] - k_oracle[(0, ii)]).abs() <= 1e-6 * k_oracle.amax().max(1.0));
    }
}
