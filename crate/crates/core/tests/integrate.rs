mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_newton_step, random_vector, SmoothModel, Stencils};
use sdre_ident::experiment::ExperimentConfig;
use sdre_ident::integrate::{
    blackbox_evolve, implicit_euler_step, trbdf2_evolve, Actuation, AdaptiveOptions, BlackBoxPlant, ImplicitPlant,
    NewtonOptions, PdeModel, Plant,
};
use sdre_ident::operators::GridSpec;

fn tight_newton(d: usize) -> NewtonOptions {
    NewtonOptions { tol: 1e-13, pinned: vec![0, d - 1], ..NewtonOptions::default() }
}

fn preset_model(name: &str) -> (PdeModel, DVector<f64>) {
    let cfg = ExperimentConfig::preset(name).unwrap();
    (cfg.plant.model().unwrap(), cfg.plant.initial_state().unwrap())
}

/// `steps` implicit Euler steps of the uncontrolled model.
fn implicit_path(model: &PdeModel, x0: &DVector<f64>, dt: f64, steps: usize, opts: &NewtonOptions) -> DVector<f64> {
    let mut x = x0.clone();
    for _ in 0..steps {
        x = implicit_euler_step(&x, dt, |z| model.drift(z), opts).unwrap().0;
    }
    x
}

#[test]
fn scalar_linear_step_is_a_division() {
    let x = DVector::from_element(1, 1.0);
    let opts = NewtonOptions { tol: 1e-14, ..NewtonOptions::default() };
    let (next, report) = implicit_euler_step(&x, 0.1, |z| -z, &opts).unwrap();
    assert!((next[0] - 1.0 / 1.1).abs() < 1e-12);
    assert!(report.converged);
}

#[test]
fn zero_dynamics_leave_the_state_alone() {
    let grid = GridSpec::new(0.0, 1.0, 0.1).unwrap();
    let model = PdeModel::new(grid.clone(), [0.0; 7], DMatrix::from_element(grid.len(), 1, 1.0)).unwrap();
    let mut x = DVector::from_fn(grid.len(), |i, _| (i as f64).sin());
    grid.pin_boundary(&mut x);
    let u = DVector::zeros(1);
    for dt in [1e-3, 0.1, 10.0] {
        let mut plant = ImplicitPlant::new(model.clone(), NewtonOptions::default());
        assert_eq!(plant.step(&x, Actuation::OpenLoop(&u), dt).unwrap().state, x);
        let (y, _) = blackbox_evolve(&model, &x, &u, dt, &AdaptiveOptions::default(), None).unwrap();
        assert!((y - &x).amax() < 1e-14);
    }
}

#[test]
fn adaptive_scalar_decay_hits_the_exponential() {
    let (y, _) = trbdf2_evolve(&DVector::from_element(1, 1.0), 1.0, |z| -z, &AdaptiveOptions::default(), None).unwrap();
    assert!((y[0] - (-1.0f64).exp()).abs() <= 1e-5);
}

#[test]
fn allen_cahn_step_matches_dense_newton() {
    let cfg = ExperimentConfig::preset("test1").unwrap();
    let grid = &cfg.plant.grid;
    let d = grid.len();
    let model = cfg.plant.model().unwrap();
    let x0 = cfg.plant.initial_state().unwrap();
    let dt = cfg.plant.time.dt();
    let (jfnk, _) = implicit_euler_step(&x0, dt, |z| model.drift(z), &tight_newton(d)).unwrap();
    let oracle = dense_newton_step(&SmoothModel { mu: cfg.plant.mu_star, st: Stencils::new(d, grid.dx()) }, &x0, dt);
    assert!((jfnk - oracle).amax() <= 1e-8);
}

#[test]
fn implicit_euler_is_first_order() {
    let (model, x0) = preset_model("test1");
    let opts = tight_newton(x0.len());
    let t_end = 0.2;
    let strict = AdaptiveOptions { rtol: 1e-11, atol: 1e-13, ..AdaptiveOptions::default() };
    let (reference, _) = trbdf2_evolve(&x0, t_end, |z| model.drift(z), &strict, None).unwrap();
    let errors: Vec<f64> = [20, 40, 80]
        .iter()
        .map(|&n| (implicit_path(&model, &x0, t_end / n as f64, n, &opts) - &reference).amax())
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 2.0).abs() <= 0.2, "errors {errors:?}");
    }
}

#[test]
fn burgers_macro_step_agrees_with_fine_implicit_steps() {
    let (model, x0) = preset_model("test2");
    let dt = 0.025;
    let u = DVector::from_vec(vec![0.3, -0.2]);
    let (bb, _) = blackbox_evolve(&model, &x0, &u, dt, &AdaptiveOptions::default(), None).unwrap();
    let forcing = model.b() * &u;
    let opts = tight_newton(x0.len());
    let mut x = x0.clone();
    for _ in 0..100 {
        x = implicit_euler_step(&x, dt / 100.0, |z| model.drift(z) + &forcing, &opts).unwrap().0;
    }
    assert!((bb - x).amax() <= 1e-3);
}

#[test]
fn allen_cahn_steppers_agree_at_half_time() {
    let cfg = ExperimentConfig::preset("test1").unwrap();
    let model = cfg.plant.model().unwrap();
    let x0 = cfg.plant.initial_state().unwrap();
    let (dt, steps) = (cfg.plant.time.dt(), cfg.plant.time.steps());
    let u = DVector::zeros(1);
    let mut implicit = ImplicitPlant::new(model.clone(), NewtonOptions::default());
    let mut blackbox = BlackBoxPlant::new(model, AdaptiveOptions::default());
    let (mut xi, mut xb) = (x0.clone(), x0);
    for _ in 0..steps {
        xi = implicit.step(&xi, Actuation::OpenLoop(&u), dt).unwrap().state;
        xb = blackbox.step(&xb, Actuation::OpenLoop(&u), dt).unwrap().state;
    }
    assert!((xi - xb).amax() <= 1e-2);
}

#[test]
fn preconditioning_does_not_change_the_step() {
    let (model, x0) = preset_model("test3");
    let d = x0.len();
    let k = DMatrix::from_fn(1, d, |_, j| if j == 0 || j == d - 1 { 0.0 } else { 0.05 });
    let mut with = ImplicitPlant::new(model.clone(), NewtonOptions { tol: 1e-10, ..NewtonOptions::default() });
    let mut without =
        ImplicitPlant::new(model, NewtonOptions { tol: 1e-10, precondition: false, ..NewtonOptions::default() });
    let a = with.step(&x0, Actuation::Feedback(&k), 0.025).unwrap();
    let b = without.step(&x0, Actuation::Feedback(&k), 0.025).unwrap();
    assert!((a.state - b.state).amax() <= 1e-8);
    assert!(a.report.krylov_iters_total < b.report.krylov_iters_total);
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 40,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(0x1e_u64),
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn jfnk_matches_dense_newton(seed in any::<u64>(), d in 6usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = [
            rng.random_range(0.0..0.05),
            rng.random_range(0.0..1.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            0.0,
            rng.random_range(-1e-4..1e-4),
        ];
        let grid = GridSpec::new(0.0, 1.0, 1.0 / (d - 1) as f64).unwrap();
        prop_assume!(grid.len() == d);
        let model = PdeModel::new(grid.clone(), mu, DMatrix::zeros(d, 1)).unwrap();
        let mut x = random_vector(&mut rng, d, 0.5);
        grid.pin_boundary(&mut x);
        let dt = 1e-3;
        let (jfnk, report) = implicit_euler_step(&x, dt, |z| model.drift(z), &tight_newton(d)).unwrap();
        prop_assert!(report.converged);
        let oracle = dense_newton_step(&SmoothModel { mu, st: Stencils::new(d, grid.dx()) }, &x, dt);
        prop_assert!((jfnk - oracle).amax() <= 1e-7);
    }

    #[test]
    fn steppers_keep_the_boundary_at_zero(seed in any::<u64>(), preset in 0usize..3, blackbox in any::<bool>()) {
        let name = ["test1", "test2", "test3"][preset];
        let (model, x0) = preset_model(name);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = x0.len();
        let m = model.b().ncols();
        let k = DMatrix::from_fn(m, d, |_, _| rng.random_range(-0.1..0.1));
        let x = &x0 + random_vector(&mut rng, d, 0.05).component_mul(&DVector::from_fn(d, |i, _| {
            if i == 0 || i == d - 1 { 0.0 } else { 1.0 }
        }));
        let out = if blackbox {
            BlackBoxPlant::new(model, AdaptiveOptions::default()).step(&x, Actuation::Feedback(&k), 0.01).unwrap()
        } else {
            ImplicitPlant::new(model, NewtonOptions::default()).step(&x, Actuation::Feedback(&k), 0.01).unwrap()
        };
        prop_assert_eq!(out.state[0], 0.0);
        prop_assert_eq!(out.state[d - 1], 0.0);
    }
}
