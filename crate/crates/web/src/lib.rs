//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes and returns a JSON string. The same functions are
//! available natively (without the `js_` prefix) so they can be tested
//! off the browser.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use sdre_ident::blr::{posterior_update, GaussianBelief, RegressionBatch};
use sdre_ident::experiment::ExperimentConfig;
use sdre_ident::integrate::{Actuation, Plant, TimeGrid};
use sdre_ident::online::{quadratic_form, sdre_gain};
use sdre_ident::riccati::{gain_from, solve_care, CostWeights, DEFAULT_TOL};

/// Longest horizon the page may request, in model time units.
pub const MAX_HORIZON: f64 = 2.0;

type Rows = Vec<Vec<f64>>;

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(format!("{name}: rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct CareRequest {
    pub a: Rows,
    pub b: Rows,
    pub q: Rows,
    pub r: Rows,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CareResponse {
    pub pi: Rows,
    pub k: Rows,
    pub residual: f64,
    pub solved: bool,
    pub status: String,
    pub fallback: bool,
}

/// Stabilizing CARE solution and gain `K = R^-1 B^T Pi` for a small system.
pub fn care_gain(request: &str) -> Result<String, String> {
    let req: CareRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let (a, b) = (matrix("A", &req.a)?, matrix("B", &req.b)?);
    let w = CostWeights::new(matrix("Q", &req.q)?, matrix("R", &req.r)?).map_err(|e| e.to_string())?;
    let sol = solve_care(&a, &b, &w, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let gain = gain_from(&sol, &b, &w);
    to_json(&CareResponse {
        pi: rows(&sol.pi),
        k: rows(&gain.k),
        residual: sol.residual,
        solved: sol.is_solved(),
        status: serde_json::to_string(&sol.status).map_err(|e| e.to_string())?,
        fallback: gain.fallback,
    })
}

#[derive(Debug, Deserialize)]
pub struct SimulateRequest {
    pub preset: String,
    pub t_end: f64,
    /// Coefficients the controller believes in; the plant keeps the true ones.
    #[serde(default)]
    pub controller_mu: Option<[f64; 7]>,
    /// Keep every `stride`-th stored state.
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Rows,
    pub controls: Rows,
    pub cost: Vec<f64>,
    pub fallbacks: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub grid: Vec<f64>,
    pub times: Vec<f64>,
    pub mu_star: [f64; 7],
    pub uncontrolled: Trajectory,
    pub controlled: Trajectory,
}

fn simulate_one(cfg: &ExperimentConfig, controller_mu: Option<&[f64; 7]>, stride: usize) -> Result<Trajectory, String> {
    let spec = &cfg.plant;
    let weights = cfg.weights().map_err(|e| e.to_string())?;
    let mut plant = spec.implicit_plant(&cfg.loop_cfg.newton).map_err(|e| e.to_string())?;
    let b = spec.b_matrix().map_err(|e| e.to_string())?;
    let mut x = spec.initial_state().map_err(|e| e.to_string())?;
    let dt = spec.time.dt();
    let mut out =
        Trajectory { states: vec![x.as_slice().to_vec()], controls: Vec::new(), cost: vec![0.0], fallbacks: 0 };
    let mut total = 0.0;
    for i in 0..spec.time.steps() {
        let k = match controller_mu {
            Some(mu) => {
                let gain =
                    sdre_gain(&spec.grid, &b, &weights, &x, mu, cfg.loop_cfg.care_tol).map_err(|e| e.to_string())?;
                out.fallbacks += gain.fallback as usize;
                gain.k
            }
            None => DMatrix::zeros(b.ncols(), x.len()),
        };
        let step = plant.step(&x, Actuation::Feedback(&k), dt).map_err(|e| e.to_string())?;
        total += dt * (quadratic_form(weights.q(), &x) + quadratic_form(weights.r(), &step.control));
        x = step.state;
        out.controls.push(step.control.as_slice().to_vec());
        if (i + 1) % stride == 0 || i + 1 == spec.time.steps() {
            out.states.push(x.as_slice().to_vec());
            out.cost.push(total);
        }
    }
    Ok(out)
}

/// Uncontrolled and SDRE-controlled runs of a preset over a shortened
/// horizon. The controller may be given wrong coefficients.
pub fn simulate(request: &str) -> Result<String, String> {
    let req: SimulateRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if !(req.t_end > 0.0 && req.t_end <= MAX_HORIZON) {
        return Err(format!("t_end must lie in (0, {MAX_HORIZON}]"));
    }
    let stride = req.stride.max(1);
    let mut cfg = ExperimentConfig::preset(&req.preset).map_err(|e| e.to_string())?;
    cfg.plant.time =
        TimeGrid::new(cfg.plant.time.dt(), req.t_end.min(cfg.plant.time.t_end())).map_err(|e| e.to_string())?;
    let belief = req.controller_mu.unwrap_or(cfg.plant.mu_star);
    let uncontrolled = simulate_one(&cfg, None, stride)?;
    let controlled = simulate_one(&cfg, Some(&belief), stride)?;
    let grid = cfg.plant.grid.points().collect();
    let steps = cfg.plant.time.steps();
    let times = (0..=steps).filter(|i| i % stride == 0 || *i == steps).map(|i| cfg.plant.time.time(i)).collect();
    to_json(&SimulateResponse { grid, times, mu_star: cfg.plant.mu_star, uncontrolled, controlled })
}

#[derive(Debug, Deserialize)]
pub struct BlrRequest {
    pub mean: Vec<f64>,
    pub cov: Rows,
    pub x: Rows,
    pub y: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlrResponse {
    pub mean: Vec<f64>,
    pub cov: Rows,
}

/// One conjugate Gaussian update of a regression belief.
pub fn blr_update(request: &str) -> Result<String, String> {
    let req: BlrRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let prior =
        GaussianBelief::new(DVector::from_vec(req.mean), matrix("cov", &req.cov)?).map_err(|e| e.to_string())?;
    let batch =
        RegressionBatch::new(matrix("X", &req.x)?, DVector::from_vec(req.y), req.sigma).map_err(|e| e.to_string())?;
    let post = posterior_update(&prior, &batch).map_err(|e| e.to_string())?;
    to_json(&BlrResponse { mean: post.mean().as_slice().to_vec(), cov: rows(post.cov()) })
}

#[wasm_bindgen(js_name = careGain)]
pub fn js_care_gain(request: &str) -> Result<String, JsValue> {
    care_gain(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn js_simulate(request: &str) -> Result<String, JsValue> {
    simulate(request).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = blrUpdate)]
pub fn js_blr_update(request: &str) -> Result<String, JsValue> {
    blr_update(request).map_err(|e| JsValue::from_str(&e))
}
