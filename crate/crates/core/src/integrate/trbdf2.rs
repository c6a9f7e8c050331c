use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::plant::PdeModel;
use super::IntegrateError;

/// Tolerances of the adaptive TR-BDF2 integrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest admissible step relative to the interval length.
    pub min_step_fraction: f64,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { rtol: 1e-6, atol: 1e-8, min_step_fraction: 1e-12, max_steps: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub accepted: usize,
    pub rejected: usize,
    pub newton_iters: usize,
    /// Size of the last accepted step, a good first guess for the next call.
    pub last_step: f64,
    /// Scaled error estimate of the last accepted step.
    pub last_error: f64,
}

const MAX_STAGE_ITERS: usize = 10;

/// Forward-difference Jacobian of `f` at `y`.
fn fd_jacobian<F>(f: &mut F, y: &DVector<f64>, fy: &DVector<f64>) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = y.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.clone();
    let sqrt_eps = f64::EPSILON.sqrt();
    for j in 0..n {
        let step = sqrt_eps * y[j].abs().max(1e-3);
        yp[j] = y[j] + step;
        let col = (f(&yp) - fy) / step;
        jac.set_column(j, &col);
        yp[j] = y[j];
    }
    jac
}

fn weighted_rms(v: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let s: f64 = v.iter().zip(weights.iter()).map(|(a, w)| (a / w).powi(2)).sum();
    (s / v.len() as f64).sqrt()
}

/// Advances `y' = f(y)` from `y0` over `[0, span]` with error control.
///
/// One-step TR-BDF2 (trapezoidal stage to `gamma h`, BDF2 stage to `h`,
/// `gamma = 2 - sqrt 2`); both stages share the iteration matrix
/// `I - (gamma h / 2) J` with a finite-difference Jacobian refreshed every
/// step, and stage equations are solved by simplified Newton.
pub fn trbdf2_evolve<F>(
    y0: &DVector<f64>,
    span: f64,
    mut f: F,
    opts: &AdaptiveOptions,
    first_step: Option<f64>,
) -> Result<(DVector<f64>, AdaptiveReport), IntegrateError>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let gamma = 2.0 - std::f64::consts::SQRT_2;
    let dcoef = gamma / 2.0;
    let w_mid = 1.0 / (gamma * (2.0 - gamma));
    let w_old = -(1.0 - gamma).powi(2) / (gamma * (2.0 - gamma));
    let k_err = (-3.0 * gamma * gamma + 4.0 * gamma - 2.0) / (12.0 * (2.0 - gamma));
    let n = y0.len();
    let mut report = AdaptiveReport::default();
    let mut y = y0.clone();
    let mut t = 0.0;
    let mut h = first_step.filter(|h| *h > 0.0 && h.is_finite()).unwrap_or(span).min(span);
    let h_min = opts.min_step_fraction * span;

    while t < span {
        if report.accepted + report.rejected >= opts.max_steps {
            return Err(IntegrateError::StepUnderflow { t, h });
        }
        let last = t + h >= span * (1.0 - 1e-12);
        if last {
            h = span - t;
        }
        let fy = f(&y);
        if !fy.iter().all(|v| v.is_finite()) {
            return Err(IntegrateError::NonFinite);
        }
        let jac = fd_jacobian(&mut f, &y, &fy);
        let iter_matrix = DMatrix::identity(n, n) - jac * (dcoef * h);
        let lu = iter_matrix.lu();
        let weights = y.map(|v| opts.atol + opts.rtol * v.abs());

        // stage equations share the form z - dcoef h f(z) = rhs
        let mut solve_stage = |rhs: &DVector<f64>, guess: DVector<f64>, iters: &mut usize| -> Option<DVector<f64>> {
            let mut z = guess;
            for _ in 0..MAX_STAGE_ITERS {
                let residual = &z - f(&z) * (dcoef * h) - rhs;
                let delta = lu.solve(&residual)?;
                z -= &delta;
                *iters += 1;
                if !z.iter().all(|v| v.is_finite()) {
                    return None;
                }
                if weighted_rms(&delta, &weights) <= 1e-3 {
                    return Some(z);
                }
            }
            None
        };

        let mut iters = 0;
        let stage1_rhs = &y + &fy * (dcoef * h);
        let stage = solve_stage(&stage1_rhs, &y + &fy * (gamma * h), &mut iters).and_then(|z_mid| {
            let stage2_rhs = &z_mid * w_mid + &y * w_old;
            let guess = &y + (&z_mid - &y) / gamma;
            solve_stage(&stage2_rhs, guess, &mut iters).map(|z_new| (z_mid, z_new))
        });
        report.newton_iters += iters;

        let Some((z_mid, y_new)) = stage else {
            report.rejected += 1;
            h *= 0.25;
            if h < h_min {
                return Err(IntegrateError::StepUnderflow { t, h });
            }
            continue;
        };
        let f_mid = f(&z_mid);
        let f_new = f(&y_new);
        let combo = &fy / gamma - &f_mid / (gamma * (1.0 - gamma)) + &f_new / (1.0 - gamma);
        let est = lu.solve(&(combo * (2.0 * k_err * h))).unwrap_or_else(|| DVector::from_element(n, f64::INFINITY));
        let scale = y.zip_map(&y_new, |a, b| opts.atol + opts.rtol * a.abs().max(b.abs()));
        let err = weighted_rms(&est, &scale);
        let factor = if err > 0.0 { (0.8 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) } else { 5.0 };
        if err <= 1.0 {
            t = if last { span } else { t + h };
            y = y_new;
            report.accepted += 1;
            report.last_step = h;
            report.last_error = err;
            h *= factor;
        } else {
            report.rejected += 1;
            h *= factor.min(0.9);
            if h < h_min {
                return Err(IntegrateError::StepUnderflow { t, h });
            }
        }
    }
    Ok((y, report))
}

/// Evolves the true dynamics `x' = A(x; mu*) x + B u` over `dt` with the
/// input held at `u`.
pub fn blackbox_evolve(
    model: &PdeModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    opts: &AdaptiveOptions,
    first_step: Option<f64>,
) -> Result<(DVector<f64>, AdaptiveReport), IntegrateError> {
    model.check_state(x)?;
    model.check_input(u)?;
    let forcing = model.b() * u;
    let (mut y, report) = trbdf2_evolve(x, dt, |z| model.drift(z) + &forcing, opts, first_step)?;
    model.grid().pin_boundary(&mut y);
    Ok((y, report))
}
