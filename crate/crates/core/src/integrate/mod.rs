//! Time steppers and plants.
//!
//! The controlled evolution uses one implicit Euler step per control
//! interval, solved by Jacobian-free Newton-Krylov. The "black box" plant is
//! an adaptive TR-BDF2 integrator of the true dynamics that the identifier
//! only observes through its outputs.

mod gmres;
mod newton_krylov;
mod plant;
mod trbdf2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::operators::OperatorError;

pub use gmres::{gmres, GmresOutcome};
pub use newton_krylov::{implicit_euler_step, implicit_euler_step_preconditioned, NewtonOptions};
pub use plant::{Actuation, BlackBoxPlant, ImplicitPlant, PdeModel, Plant, PlantMode, PlantStep};
pub use trbdf2::{blackbox_evolve, trbdf2_evolve, AdaptiveOptions, AdaptiveReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
    #[error("Newton iteration did not converge: residual {:.3e} after {} iterations", .0.final_residual, .0.newton_iters)]
    NewtonNotConverged(StepReport),
    #[error("adaptive integrator step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite values in the state")]
    NonFinite,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Uniform control grid `t_i = i dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeParams", into = "TimeParams")]
pub struct TimeGrid {
    dt: f64,
    t_end: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeParams {
    dt: f64,
    t_end: f64,
}

impl TryFrom<TimeParams> for TimeGrid {
    type Error = IntegrateError;

    fn try_from(p: TimeParams) -> Result<Self, Self::Error> {
        TimeGrid::new(p.dt, p.t_end)
    }
}

impl From<TimeGrid> for TimeParams {
    fn from(t: TimeGrid) -> Self {
        TimeParams { dt: t.dt, t_end: t.t_end }
    }
}

impl TimeGrid {
    pub fn new(dt: f64, t_end: f64) -> Result<Self, IntegrateError> {
        if !(dt > 0.0 && dt.is_finite() && t_end > 0.0 && t_end.is_finite()) {
            return Err(IntegrateError::InvalidTimeGrid(format!("dt = {dt}, t_end = {t_end}")));
        }
        let steps = (t_end / dt).round();
        if steps < 1.0 || (steps * dt - t_end).abs() > 1e-9 * t_end {
            return Err(IntegrateError::InvalidTimeGrid(format!("t_end = {t_end} is not a multiple of dt = {dt}")));
        }
        Ok(Self { dt, t_end, steps: steps as usize })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// `t_0, .., t_steps`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }
}

/// Diagnostics of one plant step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub newton_iters: usize,
    /// Implicit step: `||G(z)||_inf` at the returned state. Adaptive
    /// integrator: the last accepted scaled error estimate.
    pub final_residual: f64,
    pub krylov_iters_total: usize,
    pub converged: bool,
    /// Internal steps taken (1 for implicit Euler).
    pub substeps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_time_grids() {
        for (dt, t_end, steps) in [(0.01, 0.5, 50), (0.025, 2.0, 80)] {
            let t = TimeGrid::new(dt, t_end).unwrap();
            assert_eq!(t.steps(), steps);
            assert_eq!(t.times().len(), steps + 1);
        }
        assert!(TimeGrid::new(0.03, 0.1).is_err());
        assert!(TimeGrid::new(-0.1, 1.0).is_err());
    }
}
