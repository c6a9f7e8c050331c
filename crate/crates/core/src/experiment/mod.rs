//! Experiment driver: presets, variant runs, comparisons, grid refinement
//! replays, timing, and artifact serialization.

mod config;
mod io;

use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, PriorConfig, WeightsConfig, PRESET_NAMES};
pub use io::{read_run, write_comparison, write_run, write_timing_csv, RunSummary};

use crate::baseline::{run_open_loop, run_sdre, run_uncontrolled, PlantSpec};
use crate::blr::BlrError;
use crate::integrate::{IntegrateError, Plant, PlantMode};
use crate::online::{quadratic_form, run_online, LoopError, RunFailure, RunResult};
use crate::operators::{LibraryTerm, OperatorError};
use crate::riccati::{CostWeights, RiccatiError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset `{0}` (expected one of test1, test2, test3)")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("failed to parse configuration: {0}")]
    TomlParse(#[from] toml::de::Error),
    #[error("failed to write configuration: {0}")]
    TomlWrite(#[from] toml::ser::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed run directory: {0}")]
    Malformed(String),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Run(#[from] Box<RunFailure>),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io { path: path.to_path_buf(), source }
    }
}

macro_rules! via_loop_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ExperimentError {
            fn from(e: $t) -> Self {
                ExperimentError::Loop(e.into())
            }
        }
    )*};
}
via_loop_error!(OperatorError, IntegrateError, BlrError, RiccatiError);

/// Offsets added to the master seed so every run owns an independent stream.
pub mod seed_offsets {
    pub const RL: u64 = 0;
    pub const BLACKBOX_FULL: u64 = 1;
    pub const BLACKBOX_NO_CUBIC: u64 = 2;
    pub const BLACKBOX_VISCOUS_BURGERS: u64 = 3;
    /// Repetition `r` of a timing study uses `REPETITION * (r + 1)`.
    pub const REPETITION: u64 = 1000;
}

/// Generator for the stream `seed + offset`.
pub fn run_rng(seed: u64, offset: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset))
}

/// Runs the online loop on a fresh plant of the configured kind.
pub fn run_rl(
    cfg: &ExperimentConfig,
    label: &str,
    mode: PlantMode,
    active: &[LibraryTerm],
    seed_offset: u64,
) -> Result<RunResult, RunFailure> {
    let setup = || -> Result<_, ExperimentError> {
        let loop_cfg = cfg.loop_variant(mode, active);
        let plant: Box<dyn Plant> = match mode {
            PlantMode::Implicit => Box::new(cfg.plant.implicit_plant(&loop_cfg.newton)?),
            PlantMode::Blackbox => Box::new(cfg.plant.blackbox_plant(&loop_cfg.adaptive)?),
        };
        Ok((
            loop_cfg,
            plant,
            cfg.library_for(active)?,
            cfg.weights()?,
            cfg.prior_for(active)?,
            cfg.plant.initial_state()?,
        ))
    };
    let (loop_cfg, mut plant, library, weights, prior, x0) = setup().map_err(|e| RunFailure {
        step: 0,
        error: match e {
            ExperimentError::Loop(l) => l,
            other => LoopError::InvalidConfig(other.to_string()),
        },
        partial: Box::new(RunResult::new(label, &DVector::zeros(0))),
    })?;
    let mut rng = run_rng(cfg.seed, seed_offset);
    run_online(label, plant.as_mut(), &library, &weights, &cfg.plant.time, &x0, &prior, &loop_cfg, &mut rng)
}

/// Terminal-value digest of one run inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDigest {
    pub label: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_terms: Option<Vec<LibraryTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_estimate: Option<Vec<f64>>,
    pub final_cost: f64,
    /// `x(t_end)^T Q x(t_end)`
    pub terminal_q_norm_sq: f64,
    pub stop_index: Option<usize>,
    pub steps_completed: usize,
    pub wall_times: Vec<f64>,
}

impl RunDigest {
    pub fn of(outcome: &Result<RunResult, RunFailure>, weights: &CostWeights, active: Option<&[LibraryTerm]>) -> Self {
        let (run, error) = match outcome {
            Ok(r) => (r, None),
            Err(f) => (f.partial.as_ref(), Some(f.to_string())),
        };
        let terminal_q_norm_sq = if run.final_state().len() == weights.state_dim() {
            quadratic_form(weights.q(), &run.final_state())
        } else {
            f64::NAN
        };
        Self {
            label: run.label.clone(),
            ok: error.is_none(),
            error,
            active_terms: active.map(|a| a.to_vec()),
            terminal_estimate: run.final_estimate().map(|m| m.to_vec()),
            final_cost: run.final_cost(),
            terminal_q_norm_sq,
            stop_index: run.stop_index,
            steps_completed: run.steps(),
            wall_times: run.wall_times.clone(),
        }
    }
}

/// Sup-norm distance between the trajectories of two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDifference {
    pub a: String,
    pub b: String,
    pub inf_norm: f64,
}

/// `max_i ||x_a(t_i) - x_b(t_i)||_inf` over the common time steps.
pub fn trajectory_difference(a: &RunResult, b: &RunResult) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .flat_map(|(xa, xb)| xa.iter().zip(xb).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub preset: Option<String>,
    pub seed: u64,
    pub mu_star: Vec<f64>,
    pub runs: Vec<RunDigest>,
    pub differences: Vec<TrajectoryDifference>,
}

impl ComparisonReport {
    pub fn run(&self, label: &str) -> Option<&RunDigest> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn difference(&self, a: &str, b: &str) -> Option<f64> {
        self.differences.iter().find(|d| (d.a == a && d.b == b) || (d.a == b && d.b == a)).map(|d| d.inf_norm)
    }

    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.ok)
    }
}

fn pairwise(runs: &[(&str, &Result<RunResult, RunFailure>)], pairs: &[(usize, usize)]) -> Vec<TrajectoryDifference> {
    pairs
        .iter()
        .filter_map(|&(i, j)| match (runs[i].1, runs[j].1) {
            (Ok(a), Ok(b)) => Some(TrajectoryDifference {
                a: runs[i].0.to_string(),
                b: runs[j].0.to_string(),
                inf_norm: trajectory_difference(a, b),
            }),
            _ => None,
        })
        .collect()
}

/// Uncontrolled, SDRE and online runs of one configuration.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub uncontrolled: Result<RunResult, RunFailure>,
    pub sdre: Result<RunResult, RunFailure>,
    pub rl: Result<RunResult, RunFailure>,
    pub report: ComparisonReport,
}

impl ExperimentOutcome {
    pub fn runs(&self) -> [(&str, &Result<RunResult, RunFailure>); 3] {
        [("uncontrolled", &self.uncontrolled), ("sdre", &self.sdre), ("rl", &self.rl)]
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let weights = cfg.weights()?;
    let newton = &cfg.loop_cfg.newton;
    info!("uncontrolled run");
    let uncontrolled = run_uncontrolled(&cfg.plant, &weights, newton);
    info!("SDRE run");
    let sdre = run_sdre(&cfg.plant, &weights, newton, cfg.loop_cfg.care_tol);
    info!("online run");
    let rl = run_rl(cfg, "rl", cfg.loop_cfg.mode, &cfg.loop_cfg.active_terms, seed_offsets::RL);
    let runs = [("uncontrolled", &uncontrolled), ("sdre", &sdre), ("rl", &rl)];
    for (label, r) in &runs {
        if let Err(f) = r {
            warn!("{label} run failed: {f}");
        }
    }
    let report = ComparisonReport {
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        mu_star: cfg.plant.mu_star.to_vec(),
        runs: vec![
            RunDigest::of(&uncontrolled, &weights, None),
            RunDigest::of(&sdre, &weights, None),
            RunDigest::of(&rl, &weights, Some(&cfg.loop_cfg.active_terms)),
        ],
        differences: pairwise(&runs, &[(0, 1), (0, 2), (1, 2)]),
    };
    Ok(ExperimentOutcome { uncontrolled, sdre, rl, report })
}

/// Library variants of the black-box study, with their labels.
pub fn blackbox_variants() -> Vec<(&'static str, Vec<LibraryTerm>, u64)> {
    use LibraryTerm::*;
    vec![
        ("rl-bb", LibraryTerm::ALL.to_vec(), seed_offsets::BLACKBOX_FULL),
        (
            "rl-bb-no-cubic",
            LibraryTerm::ALL.iter().copied().filter(|t| *t != CubicReaction).collect(),
            seed_offsets::BLACKBOX_NO_CUBIC,
        ),
        ("rl-bb-viscous-burgers", vec![Laplacian, NonlinearAdvection], seed_offsets::BLACKBOX_VISCOUS_BURGERS),
    ]
}

/// Online runs against the implicit plant and against the adaptive black
/// box with three libraries, compared to the implicit run.
pub struct BlackboxOutcome {
    pub runs: Vec<(String, Result<RunResult, RunFailure>)>,
    pub report: ComparisonReport,
}

pub fn run_blackbox_comparison(cfg: &ExperimentConfig) -> Result<BlackboxOutcome, ExperimentError> {
    cfg.validate()?;
    let weights = cfg.weights()?;
    let full = LibraryTerm::ALL.to_vec();
    let mut runs = vec![("rl".to_string(), run_rl(cfg, "rl", PlantMode::Implicit, &full, seed_offsets::RL))];
    let mut actives = vec![full];
    for (label, active, offset) in blackbox_variants() {
        info!("black-box run {label}");
        runs.push((label.to_string(), run_rl(cfg, label, PlantMode::Blackbox, &active, offset)));
        actives.push(active);
    }
    let digests = runs.iter().zip(&actives).map(|((_, r), a)| RunDigest::of(r, &weights, Some(a))).collect();
    let labelled: Vec<(&str, &Result<RunResult, RunFailure>)> = runs.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let pairs: Vec<(usize, usize)> = (1..runs.len()).map(|j| (0, j)).collect();
    let report = ComparisonReport {
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        mu_star: cfg.plant.mu_star.to_vec(),
        runs: digests,
        differences: pairwise(&labelled, &pairs),
    };
    Ok(BlackboxOutcome { runs, report })
}

/// Replays the recorded input of `result` open loop on `spec` refined by
/// `factor`, re-sampling the initial profile and actuators on the fine grid.
///
/// Factor 1 is the identity and returns the source trajectory unchanged.
pub fn refine_and_replay(
    result: &RunResult,
    spec: &PlantSpec,
    factor: usize,
    cfg: &ExperimentConfig,
) -> Result<RunResult, ExperimentError> {
    let fine = spec.refined(factor)?;
    if result.controls.len() != fine.time.steps() {
        return Err(ExperimentError::Config(format!(
            "run has {} control samples, time grid needs {}",
            result.controls.len(),
            fine.time.steps()
        )));
    }
    let label = format!("{}-replay-x{factor}", result.label);
    if factor == 1 {
        return Ok(RunResult { label, ..result.clone() });
    }
    let q = cfg.weights.q_scale.unwrap_or(fine.grid.dx());
    let weights = CostWeights::scaled_identity(fine.grid.len(), q, fine.control.inputs(), cfg.weights.r_scale)?;
    let controls: Vec<DVector<f64>> = result.controls.iter().map(|u| DVector::from_column_slice(u)).collect();
    let mut plant = fine.implicit_plant(&cfg.loop_cfg.newton)?;
    let x0 = fine.initial_state()?;
    Ok(run_open_loop(&label, &mut plant, &weights, &fine.time, &x0, &controls).map_err(Box::new)?)
}

/// Mean wall-clock times over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repetitions: usize,
    pub variants: Vec<VariantTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTiming {
    pub label: String,
    pub mean_total: f64,
    /// Mean cumulative wall time after each step.
    pub mean_cumulative: Vec<f64>,
    pub failures: usize,
}

impl TimingReport {
    pub fn variant(&self, label: &str) -> Option<&VariantTiming> {
        self.variants.iter().find(|v| v.label == label)
    }
}

fn cumulative(times: &[f64]) -> Vec<f64> {
    times
        .iter()
        .scan(0.0, |acc, t| {
            *acc += t;
            Some(*acc)
        })
        .collect()
}

/// Averages per-step cumulative times of `samples`, which must have equal
/// lengths.
pub fn mean_timing(label: &str, samples: &[Vec<f64>], failures: usize) -> VariantTiming {
    let steps = samples.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut mean_cumulative = vec![0.0; steps];
    for s in samples {
        for (m, c) in mean_cumulative.iter_mut().zip(cumulative(&s[..steps])) {
            *m += c / samples.len() as f64;
        }
    }
    let mean_total = mean_cumulative.last().copied().unwrap_or(0.0);
    VariantTiming { label: label.to_string(), mean_total, mean_cumulative, failures }
}

/// Repeats the SDRE and online runs `repetitions` times with independent
/// seeds and averages their step timings.
pub fn timing_report(cfg: &ExperimentConfig, repetitions: usize) -> Result<TimingReport, ExperimentError> {
    if repetitions == 0 {
        return Err(ExperimentError::Config("repetitions must be at least 1".into()));
    }
    cfg.validate()?;
    let weights = cfg.weights()?;
    let mut sdre = Vec::new();
    let mut rl = Vec::new();
    let (mut sdre_fail, mut rl_fail) = (0, 0);
    for r in 0..repetitions {
        info!("timing repetition {}/{repetitions}", r + 1);
        match run_sdre(&cfg.plant, &weights, &cfg.loop_cfg.newton, cfg.loop_cfg.care_tol) {
            Ok(run) => sdre.push(run.wall_times),
            Err(_) => sdre_fail += 1,
        }
        let offset = seed_offsets::REPETITION * (r as u64 + 1);
        match run_rl(cfg, "rl", cfg.loop_cfg.mode, &cfg.loop_cfg.active_terms, offset) {
            Ok(run) => rl.push(run.wall_times),
            Err(_) => rl_fail += 1,
        }
    }
    Ok(TimingReport {
        repetitions,
        variants: vec![mean_timing("sdre", &sdre, sdre_fail), mean_timing("rl", &rl, rl_fail)],
    })
}
