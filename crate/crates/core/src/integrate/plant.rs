use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use super::{
    blackbox_evolve, implicit_euler_step_preconditioned, AdaptiveOptions, IntegrateError, NewtonOptions, StepReport,
};
use crate::operators::{apply_a_into, assemble_a, GridSpec, LIBRARY_SIZE};

/// Semi-discrete dynamics `x' = A(x; mu) x + B u` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeModel {
    grid: GridSpec,
    mu: [f64; LIBRARY_SIZE],
    b: DMatrix<f64>,
}

impl PdeModel {
    pub fn new(grid: GridSpec, mu: [f64; LIBRARY_SIZE], b: DMatrix<f64>) -> Result<Self, IntegrateError> {
        if b.nrows() != grid.len() {
            return Err(IntegrateError::DimensionMismatch(format!(
                "B has {} rows for a grid of {} points",
                b.nrows(),
                grid.len()
            )));
        }
        Ok(Self { grid, mu, b })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn mu(&self) -> &[f64; LIBRARY_SIZE] {
        &self.mu
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `A(x; mu) x`
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        apply_a_into(&self.grid, x, &self.mu, &mut out);
        out
    }

    /// `A(0; mu)`: the state-independent part of `A(x; mu)`, since every
    /// nonlinear term carries a factor of `x`.
    pub fn linear_part(&self) -> DMatrix<f64> {
        assemble_a(&self.grid, &DVector::zeros(self.grid.len()), &self.mu).expect("zero state matches its own grid")
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>) -> Result<(), IntegrateError> {
        Ok(self.grid.check(x)?)
    }

    pub(crate) fn check_input(&self, u: &DVector<f64>) -> Result<(), IntegrateError> {
        if u.len() != self.b.ncols() {
            return Err(IntegrateError::DimensionMismatch(format!(
                "control has {} entries, B has {} columns",
                u.len(),
                self.b.ncols()
            )));
        }
        Ok(())
    }

    fn boundary(&self) -> Vec<usize> {
        vec![0, self.grid.len() - 1]
    }
}

/// How the identifier interprets observed transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantMode {
    /// The feedback acts on the end-of-step state inside an implicit step.
    Implicit,
    /// The input is held constant at `-K x_i` over the interval.
    Blackbox,
}

/// What drives the plant over one interval.
#[derive(Debug, Clone, Copy)]
pub enum Actuation<'a> {
    /// State feedback `u = -K x`.
    Feedback(&'a DMatrix<f64>),
    /// A prescribed input held over the interval.
    OpenLoop(&'a DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub state: DVector<f64>,
    /// The input actually injected over the interval.
    pub control: DVector<f64>,
    pub report: StepReport,
}

/// A system that can be advanced one control interval at a time.
///
/// The loop only sees states going in and out, so any simulator or an
/// external process can stand in here.
pub trait Plant {
    fn mode(&self) -> PlantMode;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&mut self, x: &DVector<f64>, actuation: Actuation<'_>, dt: f64) -> Result<PlantStep, IntegrateError>;
}

fn check_gain(k: &DMatrix<f64>, m: usize, d: usize) -> Result<(), IntegrateError> {
    if k.shape() != (m, d) {
        return Err(IntegrateError::DimensionMismatch(format!("gain is {:?}, expected ({m}, {d})", k.shape())));
    }
    Ok(())
}

/// Implicit Euler plant; feedback enters as `-K x_{i+1}`.
#[derive(Debug, Clone)]
pub struct ImplicitPlant {
    model: PdeModel,
    newton: NewtonOptions,
    /// LU factors of `I - dt L` for the last `dt` used.
    preconditioner: Option<(f64, LU<f64, Dyn, Dyn>)>,
}

impl ImplicitPlant {
    pub fn new(model: PdeModel, mut newton: NewtonOptions) -> Self {
        newton.pinned = model.boundary();
        Self { model, newton, preconditioner: None }
    }

    pub fn model(&self) -> &PdeModel {
        &self.model
    }

    fn refresh_preconditioner(&mut self, dt: f64) {
        if !self.newton.precondition || self.preconditioner.as_ref().is_some_and(|(h, _)| *h == dt) {
            return;
        }
        let d = self.model.grid.len();
        let p = DMatrix::identity(d, d) - self.model.linear_part() * dt;
        let lu = p.lu();
        // a singular I - dt L leaves GMRES unpreconditioned
        self.preconditioner = lu.is_invertible().then_some((dt, lu));
    }
}

impl Plant for ImplicitPlant {
    fn mode(&self) -> PlantMode {
        PlantMode::Implicit
    }

    fn state_dim(&self) -> usize {
        self.model.grid.len()
    }

    fn input_dim(&self) -> usize {
        self.model.b.ncols()
    }

    fn step(&mut self, x: &DVector<f64>, actuation: Actuation<'_>, dt: f64) -> Result<PlantStep, IntegrateError> {
        self.model.check_state(x)?;
        let (d, m) = (self.state_dim(), self.input_dim());
        self.refresh_preconditioner(dt);
        let lu = self.preconditioner.as_ref().map(|(_, lu)| lu);
        let precond = |v: &DVector<f64>| match lu {
            Some(lu) => lu.solve(v).unwrap_or_else(|| v.clone()),
            None => v.clone(),
        };
        let model = &self.model;
        match actuation {
            Actuation::Feedback(k) => {
                check_gain(k, m, d)?;
                let rhs = |z: &DVector<f64>| model.drift(z) - &model.b * (k * z);
                let (state, report) = implicit_euler_step_preconditioned(x, dt, rhs, precond, &self.newton)?;
                let control = -(k * &state);
                Ok(PlantStep { state, control, report })
            }
            Actuation::OpenLoop(u) => {
                model.check_input(u)?;
                let forcing = &model.b * u;
                let rhs = |z: &DVector<f64>| model.drift(z) + &forcing;
                let (state, report) = implicit_euler_step_preconditioned(x, dt, rhs, precond, &self.newton)?;
                Ok(PlantStep { state, control: u.clone(), report })
            }
        }
    }
}

/// Adaptive stiff integration of the true dynamics with the input frozen at
/// the start of the interval.
#[derive(Debug, Clone)]
pub struct BlackBoxPlant {
    model: PdeModel,
    opts: AdaptiveOptions,
    last_step: Option<f64>,
}

impl BlackBoxPlant {
    pub fn new(model: PdeModel, opts: AdaptiveOptions) -> Self {
        Self { model, opts, last_step: None }
    }

    pub fn model(&self) -> &PdeModel {
        &self.model
    }
}

impl Plant for BlackBoxPlant {
    fn mode(&self) -> PlantMode {
        PlantMode::Blackbox
    }

    fn state_dim(&self) -> usize {
        self.model.grid.len()
    }

    fn input_dim(&self) -> usize {
        self.model.b.ncols()
    }

    fn step(&mut self, x: &DVector<f64>, actuation: Actuation<'_>, dt: f64) -> Result<PlantStep, IntegrateError> {
        self.model.check_state(x)?;
        let control = match actuation {
            Actuation::Feedback(k) => {
                check_gain(k, self.input_dim(), self.state_dim())?;
                -(k * x)
            }
            Actuation::OpenLoop(u) => u.clone(),
        };
        let (state, adaptive) = blackbox_evolve(&self.model, x, &control, dt, &self.opts, self.last_step)?;
        self.last_step = Some(adaptive.last_step);
        let report = StepReport {
            newton_iters: adaptive.newton_iters,
            final_residual: adaptive.last_error,
            krylov_iters_total: 0,
            converged: true,
            substeps: adaptive.accepted,
        };
        Ok(PlantStep { state, control, report })
    }
}
