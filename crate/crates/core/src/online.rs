//! Online identification and control: at every control interval, solve the
//! Riccati equation for the current model estimate, drive the plant, then
//! refine the estimate by Bayesian regression on the observed transition.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blr::{inject_noise, posterior_update, BlrError, GaussianBelief, RegressionBatch};
use crate::integrate::{
    Actuation, AdaptiveOptions, IntegrateError, NewtonOptions, Plant, PlantMode, StepReport, TimeGrid,
};
use crate::operators::{
    apply_term, assemble_a, expand_coefficients, GridSpec, LibraryTerm, OperatorError, LIBRARY_SIZE,
};
use crate::riccati::{gain_on_subspace, CareStatus, CostWeights, FeedbackGain, RiccatiError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("plant mode {plant:?} does not match configured mode {config:?}")]
    ModeMismatch { plant: PlantMode, config: PlantMode },
    #[error(transparent)]
    Plant(#[from] IntegrateError),
    #[error(transparent)]
    Regression(#[from] BlrError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// A failed run together with everything computed before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("run aborted at step {step}: {error}")]
pub struct RunFailure {
    pub step: usize,
    pub error: LoopError,
    pub partial: Box<RunResult>,
}

/// Settings of the online loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Estimation stops once the estimate moves less than this (sup norm).
    pub tol_mu: f64,
    /// Relative noise injected into the design matrix.
    pub noise_level: f64,
    pub mode: PlantMode,
    pub active_terms: Vec<LibraryTerm>,
    /// Apply no control during the first interval.
    pub first_step_zero_control: bool,
    /// Likelihood noise standard deviation.
    pub sigma: f64,
    pub care_tol: f64,
    pub newton: NewtonOptions,
    pub adaptive: AdaptiveOptions,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            tol_mu: 1e-5,
            noise_level: 0.01,
            mode: PlantMode::Implicit,
            active_terms: LibraryTerm::ALL.to_vec(),
            first_step_zero_control: true,
            sigma: 1.0,
            care_tol: crate::riccati::DEFAULT_TOL,
            newton: NewtonOptions::default(),
            adaptive: AdaptiveOptions::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if !(self.tol_mu > 0.0) {
            return Err(LoopError::InvalidConfig(format!("tol_mu must be positive, got {}", self.tol_mu)));
        }
        if !(self.noise_level >= 0.0) {
            return Err(LoopError::InvalidConfig(format!(
                "noise_level must be non-negative, got {}",
                self.noise_level
            )));
        }
        if self.active_terms.is_empty() {
            return Err(LoopError::InvalidConfig("active_terms is empty".into()));
        }
        let mut seen = [false; LIBRARY_SIZE];
        for t in &self.active_terms {
            if std::mem::replace(&mut seen[t.index() - 1], true) {
                return Err(LoopError::InvalidConfig(format!("term {} listed twice", t.name())));
            }
        }
        if !(self.sigma > 0.0) || !(self.care_tol > 0.0) || !(self.newton.tol > 0.0) {
            return Err(LoopError::InvalidConfig("sigma, care_tol and newton.tol must be positive".into()));
        }
        Ok(())
    }
}

/// One entry of the estimate history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    /// Superscript of the estimate: 0 is the prior mean.
    pub step: usize,
    /// All seven coefficients, zero for inactive terms.
    pub mu: Vec<f64>,
    pub cov_trace: f64,
}

/// Everything recorded during one closed-loop (or open-loop) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    /// `t_0 .. t_N`.
    pub times: Vec<f64>,
    /// `x^0 .. x^N`.
    pub states: Vec<Vec<f64>>,
    /// Input injected over `[t_i, t_{i+1}]`, `i = 0..N-1`.
    pub controls: Vec<Vec<f64>>,
    /// Per step: the Riccati solve failed and the zero gain was used.
    pub fallbacks: Vec<bool>,
    pub estimates: Vec<EstimateRecord>,
    /// `J(t_0) = 0, .., J(t_N)`.
    pub cumulative_cost: Vec<f64>,
    pub stop_index: Option<usize>,
    /// Seconds spent on each step.
    pub wall_times: Vec<f64>,
    pub step_reports: Vec<StepReport>,
}

impl RunResult {
    pub fn new(label: impl Into<String>, x0: &DVector<f64>) -> Self {
        Self {
            label: label.into(),
            times: vec![0.0],
            states: vec![x0.as_slice().to_vec()],
            controls: Vec::new(),
            fallbacks: Vec::new(),
            estimates: Vec::new(),
            cumulative_cost: vec![0.0],
            stop_index: None,
            wall_times: Vec::new(),
            step_reports: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn state(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.states[i])
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.states.len() - 1)
    }

    pub fn final_cost(&self) -> f64 {
        *self.cumulative_cost.last().expect("cost starts at t_0")
    }

    /// Latest coefficient estimate, if the run estimated anything.
    pub fn final_estimate(&self) -> Option<&[f64]> {
        self.estimates.last().map(|e| e.mu.as_slice())
    }

    pub fn total_wall_time(&self) -> f64 {
        self.wall_times.iter().sum()
    }

    /// Lengths agree with each other and the cost never decreases.
    pub fn is_consistent(&self) -> bool {
        let n = self.controls.len();
        self.times.len() == n + 1
            && self.states.len() == n + 1
            && self.cumulative_cost.len() == n + 1
            && self.fallbacks.len() == n
            && self.wall_times.len() == n
            && self.step_reports.len() == n
            && self.cumulative_cost.windows(2).all(|w| w[1] >= w[0])
    }

    pub(crate) fn push_step(&mut self, t: f64, state: &DVector<f64>, control: &DVector<f64>, stage_cost: f64) {
        self.times.push(t);
        self.states.push(state.as_slice().to_vec());
        self.controls.push(control.as_slice().to_vec());
        let last = self.final_cost();
        self.cumulative_cost.push(last + stage_cost);
    }
}

/// `||x||_W^2`
pub fn quadratic_form(w: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(w * x))
}

/// `dt (x^T Q x + u^T R u)`
pub(crate) fn stage_cost(weights: &CostWeights, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> f64 {
    dt * (quadratic_form(weights.q(), x) + quadratic_form(weights.r(), u))
}

/// Discretization the identifier regresses on: the grid, the actuator
/// matrix, and the candidate terms in play.
#[derive(Debug, Clone, PartialEq)]
pub struct Library {
    pub grid: GridSpec,
    pub b: DMatrix<f64>,
    pub active: Vec<LibraryTerm>,
}

/// One observed plant transition under gain `k`.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub x_i: &'a DVector<f64>,
    pub x_next: &'a DVector<f64>,
    pub k: &'a DMatrix<f64>,
    pub dt: f64,
}

/// Regression batch `Y ~ X mu` from one transition.
///
/// Columns of `X` are `A_j(x_next) x_next` for the active terms; the
/// sign-switching stencils follow the signs in `estimate`. `Y` adds back the
/// control contribution at the state the plant actually fed back. Noise goes
/// into `X` only.
pub fn assemble_regression<R: Rng + ?Sized>(
    library: &Library,
    transition: &Transition<'_>,
    estimate: &[f64; LIBRARY_SIZE],
    mode: PlantMode,
    sigma: f64,
    noise_level: f64,
    rng: &mut R,
) -> Result<RegressionBatch, LoopError> {
    let Transition { x_i, x_next, k, dt } = *transition;
    let d = library.grid.len();
    let mut x = DMatrix::zeros(d, library.active.len());
    for (col, &term) in library.active.iter().enumerate() {
        let sign = if estimate[term.index() - 1] >= 0.0 { 1.0 } else { -1.0 };
        x.set_column(col, &apply_term(term, &library.grid, x_next, sign)?);
    }
    let fed_back = match mode {
        PlantMode::Implicit => x_next,
        PlantMode::Blackbox => x_i,
    };
    let y = (x_next - x_i) / dt + &library.b * (k * fed_back);
    let x = inject_noise(&x, noise_level, rng);
    Ok(RegressionBatch::new(x, y, sigma)?)
}

/// True when the estimate moved by less than `tol_mu` in the sup norm.
pub fn stopping_check(mu_new: &[f64], mu_old: &[f64], tol_mu: f64) -> bool {
    assert_eq!(mu_new.len(), mu_old.len(), "estimate lengths differ");
    mu_new.iter().zip(mu_old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < tol_mu
}

/// State-dependent gain for `A(x; mu)`, solved on the interior nodes.
pub fn sdre_gain(
    grid: &GridSpec,
    b: &DMatrix<f64>,
    weights: &CostWeights,
    x: &DVector<f64>,
    mu: &[f64; LIBRARY_SIZE],
    care_tol: f64,
) -> Result<FeedbackGain, LoopError> {
    let a = assemble_a(grid, x, mu)?;
    let interior: Vec<usize> = grid.interior().collect();
    let synth = gain_on_subspace(&a, b, weights, &interior, care_tol)?;
    match &synth.solution.status {
        CareStatus::Failed(reason) => warn!("Riccati solve failed ({reason}); using the zero gain"),
        CareStatus::Solved => {
            debug!("Riccati residual {:.3e} after {} refinements", synth.solution.residual, synth.solution.refinements)
        }
    }
    Ok(synth.gain)
}

/// Runs the online loop over `time` from `x0`.
///
/// `prior` is over the active terms in the order of `cfg.active_terms`.
#[allow(clippy::too_many_arguments)]
pub fn run_online<P: Plant + ?Sized, R: Rng + ?Sized>(
    label: &str,
    plant: &mut P,
    library: &Library,
    weights: &CostWeights,
    time: &TimeGrid,
    x0: &DVector<f64>,
    prior: &GaussianBelief,
    cfg: &LoopConfig,
    rng: &mut R,
) -> Result<RunResult, RunFailure> {
    let mut result = RunResult::new(label, x0);
    let fail = |step: usize, error: LoopError, partial: &RunResult| RunFailure {
        step,
        error,
        partial: Box::new(partial.clone()),
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(0, e, &result));
    }
    if plant.mode() != cfg.mode {
        return Err(fail(0, LoopError::ModeMismatch { plant: plant.mode(), config: cfg.mode }, &result));
    }
    if library.active != cfg.active_terms || prior.dim() != cfg.active_terms.len() {
        let msg = format!(
            "library has {} terms, config {}, prior {}",
            library.active.len(),
            cfg.active_terms.len(),
            prior.dim()
        );
        return Err(fail(0, LoopError::InvalidConfig(msg), &result));
    }
    let d = library.grid.len();
    let m = library.b.ncols();
    let dt = time.dt();
    let mut belief = prior.clone();
    let mut estimate = expand_coefficients(&cfg.active_terms, belief.mean().as_slice());
    result.estimates.push(EstimateRecord { step: 0, mu: estimate.to_vec(), cov_trace: belief.cov().trace() });
    let mut x = x0.clone();

    for i in 0..time.steps() {
        let started = Instant::now();
        let gain = if i == 0 && cfg.first_step_zero_control {
            FeedbackGain { k: DMatrix::zeros(m, d), fallback: false }
        } else {
            match sdre_gain(&library.grid, &library.b, weights, &x, &estimate, cfg.care_tol) {
                Ok(g) => g,
                Err(e) => return Err(fail(i, e, &result)),
            }
        };
        let step = match plant.step(&x, Actuation::Feedback(&gain.k), dt) {
            Ok(s) => s,
            Err(e) => return Err(fail(i, e.into(), &result)),
        };
        let cost = stage_cost(weights, &x, &step.control, dt);

        if result.stop_index.is_none() {
            let transition = Transition { x_i: &x, x_next: &step.state, k: &gain.k, dt };
            let updated =
                assemble_regression(library, &transition, &estimate, cfg.mode, cfg.sigma, cfg.noise_level, rng)
                    .and_then(|batch| Ok(posterior_update(&belief, &batch)?));
            belief = match updated {
                Ok(b) => b,
                Err(e) => return Err(fail(i, e, &result)),
            };
            let next = expand_coefficients(&cfg.active_terms, belief.mean().as_slice());
            result.estimates.push(EstimateRecord { step: i + 1, mu: next.to_vec(), cov_trace: belief.cov().trace() });
            if stopping_check(&next, &estimate, cfg.tol_mu) {
                debug!("{label}: estimation stopped at step {}", i + 1);
                result.stop_index = Some(i + 1);
            }
            estimate = next;
        }

        result.push_step(time.time(i + 1), &step.state, &step.control, cost);
        result.fallbacks.push(gain.fallback);
        result.step_reports.push(step.report);
        result.wall_times.push(started.elapsed().as_secs_f64());
        x = step.state;
    }
    Ok(result)
}
