use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{gmres, IntegrateError, StepReport};

/// Tolerances of the Jacobian-free Newton-Krylov solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    /// Stop once `||G(z)||_inf` is at or below this.
    pub tol: f64,
    pub max_newton: usize,
    pub restart: usize,
    pub krylov_tol: f64,
    pub max_krylov: usize,
    /// Right-precondition GMRES with `I - dt L`, `L` the state-independent
    /// part of the model, when the plant can supply it.
    pub precondition: bool,
    /// Entries forced to zero in the returned state (Dirichlet nodes).
    #[serde(skip)]
    pub pinned: Vec<usize>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_newton: 500,
            restart: 30,
            krylov_tol: 1e-8,
            max_krylov: 200,
            precondition: true,
            pinned: Vec::new(),
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One implicit Euler step: finds `z` with `z - x - dt * rhs(z) = 0`.
///
/// Newton starts from `x`; each correction is an inexact GMRES solve with
/// the Jacobian action replaced by a forward difference of the residual.
/// A correction that increases the residual is halved (up to ten times).
pub fn implicit_euler_step<F>(
    x: &DVector<f64>,
    dt: f64,
    rhs: F,
    opts: &NewtonOptions,
) -> Result<(DVector<f64>, StepReport), IntegrateError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    implicit_euler_step_preconditioned(x, dt, rhs, |v: &DVector<f64>| v.clone(), opts)
}

/// [`implicit_euler_step`] with GMRES right-preconditioned by `precond`,
/// which applies an approximate inverse of the step Jacobian.
pub fn implicit_euler_step_preconditioned<F, P>(
    x: &DVector<f64>,
    dt: f64,
    mut rhs: F,
    mut precond: P,
    opts: &NewtonOptions,
) -> Result<(DVector<f64>, StepReport), IntegrateError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
    P: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut residual_of = |z: &DVector<f64>| -> DVector<f64> { z - x - rhs(z) * dt };
    let mut z = x.clone();
    let mut g = residual_of(&z);
    let mut g_norm = inf_norm(&g);
    let mut report = StepReport { substeps: 1, ..StepReport::default() };
    let sqrt_eps = f64::EPSILON.sqrt();

    while !(g_norm <= opts.tol) {
        if !g_norm.is_finite() {
            return Err(IntegrateError::NonFinite);
        }
        if report.newton_iters >= opts.max_newton {
            report.final_residual = g_norm;
            return Err(IntegrateError::NewtonNotConverged(report));
        }
        let z_norm = z.norm();
        let rhs_vec = -&g;
        let outcome = gmres(
            |w| {
                let v = precond(w);
                let v_norm = v.norm();
                if v_norm == 0.0 {
                    return DVector::zeros(v.len());
                }
                let eps = sqrt_eps * (1.0 + z_norm) / v_norm;
                (residual_of(&(&z + v * eps)) - &g) / eps
            },
            &rhs_vec,
            opts.restart,
            opts.krylov_tol,
            opts.max_krylov,
        );
        report.krylov_iters_total += outcome.iterations;
        report.newton_iters += 1;

        let mut step = precond(&outcome.solution);
        let mut accepted = false;
        for _ in 0..10 {
            let trial = &z + &step;
            let g_trial = residual_of(&trial);
            let n_trial = inf_norm(&g_trial);
            if n_trial < g_norm {
                z = trial;
                g = g_trial;
                g_norm = n_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // take the shortened step anyway; a stalled iteration ends at the cap
            z += &step;
            g = residual_of(&z);
            g_norm = inf_norm(&g);
        }
    }
    for &i in &opts.pinned {
        z[i] = 0.0;
    }
    report.final_residual = g_norm;
    report.converged = true;
    Ok((z, report))
}
