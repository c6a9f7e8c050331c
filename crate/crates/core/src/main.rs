use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use sdre_ident::baseline::run_uncontrolled;
use sdre_ident::experiment::{
    read_run, refine_and_replay, run_blackbox_comparison, run_experiment, timing_report, write_comparison, write_run,
    write_timing_csv, ComparisonReport, ExperimentConfig, ExperimentError, RunSummary,
};
use sdre_ident::online::{quadratic_form, RunFailure, RunResult};

/// Online identification and SDRE control experiments.
#[derive(Parser)]
#[command(name = "sdre-ident", version, about)]
struct Cli {
    /// Root directory for run artifacts.
    #[arg(long, global = true, env = "SDRE_IDENT_OUT", default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uncontrolled, SDRE and online runs of one configuration.
    Run { config: PathBuf },
    /// Online runs against the adaptive black-box plant with three libraries.
    CompareBlackbox { config: PathBuf },
    /// Replay a run's control signal on a finer grid.
    Refine {
        run_dir: PathBuf,
        #[arg(long, value_parser = ["2", "4"])]
        factor: String,
    },
    /// Mean wall-clock times of SDRE and online runs.
    Timing {
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        reps: usize,
    },
    /// Print a preset configuration (test1, test2, test3) as TOML.
    ShowPreset { name: String },
}

fn experiment_dir(out: &Path, config: &Path, suffix: &str) -> PathBuf {
    let stem = config.file_stem().map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned());
    out.join(format!("{stem}{suffix}"))
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io { path: dir.into(), source: e })?;
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string()?).map_err(|e| ExperimentError::Io { path, source: e })
}

/// Writes a run (or what a failed run produced) and returns whether it
/// completed.
fn save_run(
    dir: &Path,
    outcome: &Result<RunResult, RunFailure>,
    cfg: &ExperimentConfig,
) -> Result<bool, ExperimentError> {
    let (run, failure) = match outcome {
        Ok(r) => (r, None),
        Err(f) => (f.partial.as_ref(), Some(f.to_string())),
    };
    let mut summary = RunSummary::describe(run, &cfg.plant.mu_star);
    summary.preset = cfg.preset.clone();
    summary.seed = cfg.seed;
    summary.sigma = cfg.loop_cfg.sigma;
    if run.final_estimate().is_some() {
        summary.mode = Some(cfg.loop_cfg.mode);
    }
    summary.failure = failure.clone();
    if run.states.first().is_some_and(|s| !s.is_empty()) {
        write_run(&dir.join(&run.label), run, &summary)?;
    }
    if let Some(f) = failure {
        error!("{}: {f}", run.label);
    }
    Ok(outcome.is_ok())
}

fn print_report(report: &ComparisonReport) {
    println!("{:<24} {:>14} {:>14} {:>6}  terminal estimate", "run", "cost", "|x(T)|_Q^2", "stop");
    for r in &report.runs {
        let estimate = r
            .terminal_estimate
            .as_ref()
            .map(|m| m.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "))
            .unwrap_or_default();
        let stop = r.stop_index.map_or("-".to_string(), |s| s.to_string());
        let status = if r.ok { "" } else { " (failed)" };
        println!(
            "{:<24} {:>14.6e} {:>14.6e} {:>6}  {estimate}{status}",
            r.label, r.final_cost, r.terminal_q_norm_sq, stop
        );
    }
    for d in &report.differences {
        println!("max |{} - {}| = {:.6e}", d.a, d.b, d.inf_norm);
    }
}

fn find_config(run_dir: &Path) -> Option<PathBuf> {
    [run_dir.join("config.toml"), run_dir.parent()?.join("config.toml")].into_iter().find(|p| p.exists())
}

fn execute(cli: Cli) -> Result<bool, ExperimentError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = experiment_dir(&cli.out, &config, "");
            write_config(&dir, &cfg)?;
            let outcome = run_experiment(&cfg)?;
            let mut ok = true;
            for (_, r) in outcome.runs() {
                ok &= save_run(&dir, r, &cfg)?;
            }
            write_comparison(&dir.join("comparison.json"), &outcome.report)?;
            print_report(&outcome.report);
            println!("artifacts in {}", dir.display());
            Ok(ok)
        }
        Command::CompareBlackbox { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = experiment_dir(&cli.out, &config, "-blackbox");
            write_config(&dir, &cfg)?;
            let outcome = run_blackbox_comparison(&cfg)?;
            let mut ok = true;
            for (_, r) in &outcome.runs {
                ok &= save_run(&dir, r, &cfg)?;
            }
            write_comparison(&dir.join("comparison.json"), &outcome.report)?;
            print_report(&outcome.report);
            println!("artifacts in {}", dir.display());
            Ok(ok)
        }
        Command::Refine { run_dir, factor } => {
            let factor: usize = factor.parse().expect("restricted by clap");
            let config_path = find_config(&run_dir).ok_or_else(|| {
                ExperimentError::Malformed(format!("no config.toml in {} or its parent", run_dir.display()))
            })?;
            let cfg = ExperimentConfig::from_file(&config_path)?;
            let (source, _) = read_run(&run_dir)?;
            let replay = refine_and_replay(&source, &cfg.plant, factor, &cfg)?;
            let fine = cfg.plant.refined(factor)?;
            let fine_cfg = ExperimentConfig { plant: fine.clone(), ..cfg.clone() };
            let weights = fine_cfg.weights()?;
            let free = run_uncontrolled(&fine, &weights, &cfg.loop_cfg.newton)
                .map(|r| RunResult { label: format!("uncontrolled-x{factor}"), ..r });
            let parent = run_dir.parent().unwrap_or(Path::new("."));
            let mut ok = save_run(parent, &Ok(replay.clone()), &fine_cfg)?;
            ok &= save_run(parent, &free, &fine_cfg)?;
            let replay_q = quadratic_form(weights.q(), &replay.final_state());
            println!("{}: terminal |x|_Q^2 = {replay_q:.6e}, cost = {:.6e}", replay.label, replay.final_cost());
            if let Ok(free) = &free {
                let free_q = quadratic_form(weights.q(), &free.final_state());
                println!("{}: terminal |x|_Q^2 = {free_q:.6e}, cost = {:.6e}", free.label, free.final_cost());
                println!("ratio = {:.4}", replay_q / free_q);
            }
            Ok(ok)
        }
        Command::Timing { config, reps } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = experiment_dir(&cli.out, &config, "-timing");
            write_config(&dir, &cfg)?;
            let report = timing_report(&cfg, reps)?;
            write_timing_csv(&dir.join("timing.csv"), &report)?;
            let path = dir.join("timing.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)
                .map_err(|e| ExperimentError::Io { path, source: e })?;
            for v in &report.variants {
                println!(
                    "{:<6} mean total {:.4} s over {} repetitions ({} failed)",
                    v.label, v.mean_total, reps, v.failures
                );
            }
            Ok(report.variants.iter().all(|v| v.failures == 0))
        }
        Command::ShowPreset { name } => {
            print!("{}", ExperimentConfig::preset(&name)?.to_toml_string()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
