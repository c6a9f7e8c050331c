//! Run directories: one CSV per artifact plus a JSON summary.
//!
//! Floats are written with 17 significant digits so a read-back run is
//! bit-identical to the one written.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComparisonReport, ExperimentError, TimingReport};
use crate::integrate::{PlantMode, StepReport};
use crate::online::{EstimateRecord, RunResult};
use crate::operators::LibraryTerm;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const CONTROL_CSV: &str = "control.csv";
pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const COST_CSV: &str = "cost.csv";
pub const STEPS_CSV: &str = "steps.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run-level facts that are not part of [`RunResult`] itself.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PlantMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_terms: Option<Vec<LibraryTerm>>,
    pub seed: u64,
    pub sigma: f64,
    pub mu_star: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_estimate: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_error_inf: Option<f64>,
    pub stop_index: Option<usize>,
    pub stop_time: Option<f64>,
    pub steps: usize,
    pub final_cost: f64,
    pub total_wall_time: f64,
    pub fallback_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunSummary {
    /// Fills the derived fields from `run`; `mu_star` drives the estimate
    /// error columns.
    pub fn describe(run: &RunResult, mu_star: &[f64]) -> Self {
        let terminal_estimate = run.final_estimate().map(|m| m.to_vec());
        let terminal_error_inf = terminal_estimate.as_ref().map(|m| sup_distance(m, mu_star));
        Self {
            label: run.label.clone(),
            mu_star: mu_star.to_vec(),
            terminal_estimate,
            terminal_error_inf,
            stop_index: run.stop_index,
            stop_time: run.stop_index.and_then(|i| run.times.get(i).copied()),
            steps: run.steps(),
            final_cost: run.final_cost(),
            total_wall_time: run.total_wall_time(),
            fallback_steps: run.fallbacks.iter().filter(|f| **f).count(),
            sigma: 1.0,
            ..Self::default()
        }
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>, ExperimentError> {
    let file = fs::File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn open(path: &Path) -> Result<csv::Reader<fs::File>, ExperimentError> {
    let file = fs::File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

/// Writes `run` into `dir` (created if missing).
pub fn write_run(dir: &Path, run: &RunResult, summary: &RunSummary) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let d = run.states.first().map_or(0, |s| s.len());
    let m = run.controls.first().map_or(0, |u| u.len());

    let mut w = create(&dir.join(TRAJECTORY_CSV))?;
    w.write_record(std::iter::once("t".to_string()).chain((0..d).map(|i| format!("x_{i}"))))?;
    for (t, x) in run.times.iter().zip(&run.states) {
        w.write_record(std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v))))?;
    }
    w.flush().map_err(|e| ExperimentError::io(dir, e))?;

    let mut w = create(&dir.join(CONTROL_CSV))?;
    w.write_record(
        std::iter::once("t".to_string())
            .chain((1..=m).map(|k| format!("u_{k}")))
            .chain(std::iter::once("fallback".into())),
    )?;
    for ((t, u), fb) in run.times.iter().zip(&run.controls).zip(&run.fallbacks) {
        w.write_record(
            std::iter::once(num(*t)).chain(u.iter().map(|v| num(*v))).chain(std::iter::once(fb.to_string())),
        )?;
    }
    w.flush().map_err(|e| ExperimentError::io(dir, e))?;

    let mut w = create(&dir.join(ESTIMATES_CSV))?;
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=crate::operators::LIBRARY_SIZE).map(|j| format!("mu_{j}")));
    header.extend(["cov_trace".to_string(), "err_inf".to_string()]);
    w.write_record(&header)?;
    for e in &run.estimates {
        let t = run.times.get(e.step).copied().unwrap_or(f64::NAN);
        let err = if summary.mu_star.len() == e.mu.len() { sup_distance(&e.mu, &summary.mu_star) } else { f64::NAN };
        let mut row = vec![e.step.to_string(), num(t)];
        row.extend(e.mu.iter().map(|v| num(*v)));
        row.extend([num(e.cov_trace), num(err)]);
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::io(dir, e))?;

    let mut w = create(&dir.join(COST_CSV))?;
    w.write_record(["t", "cost"])?;
    for (t, c) in run.times.iter().zip(&run.cumulative_cost) {
        w.write_record([num(*t), num(*c)])?;
    }
    w.flush().map_err(|e| ExperimentError::io(dir, e))?;

    let mut w = create(&dir.join(STEPS_CSV))?;
    w.write_record(["step", "wall_time", "newton_iters", "krylov_iters", "final_residual", "substeps", "converged"])?;
    for (i, (wt, r)) in run.wall_times.iter().zip(&run.step_reports).enumerate() {
        w.write_record([
            i.to_string(),
            num(*wt),
            r.newton_iters.to_string(),
            r.krylov_iters_total.to_string(),
            num(r.final_residual),
            r.substeps.to_string(),
            r.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| ExperimentError::io(dir, e))?;

    let path = dir.join(SUMMARY_JSON);
    fs::write(&path, serde_json::to_string_pretty(summary)?).map_err(|e| ExperimentError::io(&path, e))?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, ExperimentError> {
    field.parse().map_err(|_| ExperimentError::Malformed(format!("cannot parse {what} from `{field}`")))
}

fn rows(path: &Path) -> Result<Vec<csv::StringRecord>, ExperimentError> {
    let mut r = open(path)?;
    Ok(r.records().collect::<Result<_, _>>()?)
}

/// Reads a run directory written by [`write_run`].
pub fn read_run(dir: &Path) -> Result<(RunResult, RunSummary), ExperimentError> {
    let path = dir.join(SUMMARY_JSON);
    let text = fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
    let summary: RunSummary = serde_json::from_str(&text)?;

    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in rows(&dir.join(TRAJECTORY_CSV))? {
        times.push(parse(&rec[0], "time")?);
        states.push(rec.iter().skip(1).map(|f| parse(f, "state")).collect::<Result<Vec<f64>, _>>()?);
    }
    let mut controls = Vec::new();
    let mut fallbacks = Vec::new();
    for rec in rows(&dir.join(CONTROL_CSV))? {
        let n = rec.len();
        if n < 2 {
            return Err(ExperimentError::Malformed("control row too short".into()));
        }
        controls.push(rec.iter().skip(1).take(n - 2).map(|f| parse(f, "control")).collect::<Result<Vec<f64>, _>>()?);
        fallbacks.push(parse(&rec[n - 1], "fallback flag")?);
    }
    let mut estimates = Vec::new();
    for rec in rows(&dir.join(ESTIMATES_CSV))? {
        let n = rec.len();
        if n < 4 {
            return Err(ExperimentError::Malformed("estimate row too short".into()));
        }
        estimates.push(EstimateRecord {
            step: parse(&rec[0], "step")?,
            mu: rec.iter().skip(2).take(n - 4).map(|f| parse(f, "estimate")).collect::<Result<Vec<f64>, _>>()?,
            cov_trace: parse(&rec[n - 2], "covariance trace")?,
        });
    }
    let cumulative_cost =
        rows(&dir.join(COST_CSV))?.iter().map(|rec| parse(&rec[1], "cost")).collect::<Result<Vec<f64>, _>>()?;
    let mut wall_times = Vec::new();
    let mut step_reports = Vec::new();
    for rec in rows(&dir.join(STEPS_CSV))? {
        wall_times.push(parse(&rec[1], "wall time")?);
        step_reports.push(StepReport {
            newton_iters: parse(&rec[2], "newton iterations")?,
            krylov_iters_total: parse(&rec[3], "krylov iterations")?,
            final_residual: parse(&rec[4], "residual")?,
            substeps: parse(&rec[5], "substeps")?,
            converged: parse(&rec[6], "converged flag")?,
        });
    }
    let run = RunResult {
        label: summary.label.clone(),
        times,
        states,
        controls,
        fallbacks,
        estimates,
        cumulative_cost,
        stop_index: summary.stop_index,
        wall_times,
        step_reports,
    };
    if !run.is_consistent() {
        return Err(ExperimentError::Malformed(format!("{}: artifact lengths disagree", dir.display())));
    }
    Ok((run, summary))
}

pub fn write_comparison(path: &Path, report: &ComparisonReport) -> Result<(), ExperimentError> {
    fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| ExperimentError::io(path, e))
}

/// `step, <variant>_cumulative...` with one row per step.
pub fn write_timing_csv(path: &Path, report: &TimingReport) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    let mut header = vec!["step".to_string()];
    header.extend(report.variants.iter().map(|v| format!("{}_cumulative", v.label)));
    w.write_record(&header)?;
    let steps = report.variants.iter().map(|v| v.mean_cumulative.len()).max().unwrap_or(0);
    for i in 0..steps {
        let mut row = vec![(i + 1).to_string()];
        row.extend(report.variants.iter().map(|v| v.mean_cumulative.get(i).map_or(String::new(), |c| num(*c))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))?;
    Ok(())
}
