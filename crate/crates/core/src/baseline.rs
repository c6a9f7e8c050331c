//! Reference runs on the true model: SDRE control with the exact
//! coefficients, and the free (uncontrolled) evolution.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::integrate::{
    Actuation, AdaptiveOptions, BlackBoxPlant, ImplicitPlant, NewtonOptions, PdeModel, Plant, TimeGrid,
};
use crate::online::{sdre_gain, stage_cost, LoopError, RunFailure, RunResult};
use crate::operators::{build_control, eval_initial, ControlOperator, GridSpec, InitialProfile, LIBRARY_SIZE};
use crate::riccati::CostWeights;

/// The true system: grid, coefficients, actuators, initial state and
/// horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub grid: GridSpec,
    pub mu_star: [f64; LIBRARY_SIZE],
    pub control: ControlOperator,
    pub initial: InitialProfile,
    pub time: TimeGrid,
}

impl PlantSpec {
    pub fn b_matrix(&self) -> Result<DMatrix<f64>, LoopError> {
        Ok(build_control(&self.control, &self.grid)?)
    }

    pub fn initial_state(&self) -> Result<DVector<f64>, LoopError> {
        Ok(eval_initial(&self.initial, &self.grid)?)
    }

    pub fn model(&self) -> Result<PdeModel, LoopError> {
        Ok(PdeModel::new(self.grid.clone(), self.mu_star, self.b_matrix()?)?)
    }

    pub fn implicit_plant(&self, newton: &NewtonOptions) -> Result<ImplicitPlant, LoopError> {
        Ok(ImplicitPlant::new(self.model()?, newton.clone()))
    }

    pub fn blackbox_plant(&self, opts: &AdaptiveOptions) -> Result<BlackBoxPlant, LoopError> {
        Ok(BlackBoxPlant::new(self.model()?, opts.clone()))
    }

    /// The same problem on a grid `factor` times finer.
    pub fn refined(&self, factor: usize) -> Result<Self, LoopError> {
        Ok(Self { grid: self.grid.refined(factor)?, ..self.clone() })
    }

    /// Default weights `Q = dx I`, `R = 0.01 I`.
    pub fn default_weights(&self) -> CostWeights {
        CostWeights::scaled_identity(self.grid.len(), self.grid.dx(), self.control.inputs(), 0.01)
            .expect("scaled identities are valid weights")
    }
}

fn setup_failure(error: LoopError) -> RunFailure {
    RunFailure { step: 0, error, partial: Box::new(RunResult::new("setup", &DVector::zeros(0))) }
}

/// SDRE control with the exact model, advanced by the implicit stepper.
pub fn run_sdre(
    spec: &PlantSpec,
    weights: &CostWeights,
    newton: &NewtonOptions,
    care_tol: f64,
) -> Result<RunResult, RunFailure> {
    let (mut plant, b, x0) =
        (|| -> Result<_, LoopError> { Ok((spec.implicit_plant(newton)?, spec.b_matrix()?, spec.initial_state()?)) })()
            .map_err(setup_failure)?;
    let mut result = RunResult::new("sdre", &x0);
    let dt = spec.time.dt();
    let mut x = x0;
    for i in 0..spec.time.steps() {
        let started = Instant::now();
        let fail =
            |error: LoopError, partial: &RunResult| RunFailure { step: i, error, partial: Box::new(partial.clone()) };
        let gain = sdre_gain(&spec.grid, &b, weights, &x, &spec.mu_star, care_tol).map_err(|e| fail(e, &result))?;
        let step = plant.step(&x, Actuation::Feedback(&gain.k), dt).map_err(|e| fail(e.into(), &result))?;
        let cost = stage_cost(weights, &x, &step.control, dt);
        result.push_step(spec.time.time(i + 1), &step.state, &step.control, cost);
        result.fallbacks.push(gain.fallback);
        result.step_reports.push(step.report);
        result.wall_times.push(started.elapsed().as_secs_f64());
        x = step.state;
    }
    Ok(result)
}

/// Replays a prescribed input sequence open loop on `plant`.
///
/// `controls[i]` is held over `[t_i, t_{i+1}]`.
pub fn run_open_loop<P: Plant + ?Sized>(
    label: &str,
    plant: &mut P,
    weights: &CostWeights,
    time: &TimeGrid,
    x0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<RunResult, RunFailure> {
    let mut result = RunResult::new(label, x0);
    let dt = time.dt();
    let mut x = x0.clone();
    for i in 0..time.steps() {
        let started = Instant::now();
        let fail =
            |error: LoopError, partial: &RunResult| RunFailure { step: i, error, partial: Box::new(partial.clone()) };
        let Some(u) = controls.get(i) else {
            return Err(fail(LoopError::InvalidConfig(format!("no control given for step {i}")), &result));
        };
        let step = plant.step(&x, Actuation::OpenLoop(u), dt).map_err(|e| fail(e.into(), &result))?;
        let cost = stage_cost(weights, &x, &step.control, dt);
        result.push_step(time.time(i + 1), &step.state, &step.control, cost);
        result.fallbacks.push(false);
        result.step_reports.push(step.report);
        result.wall_times.push(started.elapsed().as_secs_f64());
        x = step.state;
    }
    Ok(result)
}

/// Free evolution `u = 0` of the true model with the implicit stepper.
pub fn run_uncontrolled(
    spec: &PlantSpec,
    weights: &CostWeights,
    newton: &NewtonOptions,
) -> Result<RunResult, RunFailure> {
    let (mut plant, x0) = (|| -> Result<_, LoopError> { Ok((spec.implicit_plant(newton)?, spec.initial_state()?)) })()
        .map_err(setup_failure)?;
    let zeros = vec![DVector::zeros(spec.control.inputs()); spec.time.steps()];
    run_open_loop("uncontrolled", &mut plant, weights, &spec.time, &x0, &zeros)
}
