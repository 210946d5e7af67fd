//! Experiment orchestration: loads a config, runs its trials (optionally
//! on parallel workers), and persists everything needed to inspect or
//! reproduce the run.
//!
//! Output directory layout:
//!
//! ```text
//! out/
//!   config.txt            canonical config echo; feeding it back
//!                         reproduces the run
//!   summary.json          config echo, per-iteration cross-trial stats,
//!                         and run metadata
//!   trial_<t>.csv         per-iteration metrics of trial t
//!   trial_<t>/checkpoint/ final parameters, environment state, and the
//!                         config, enough to probe exploitability later
//!   return.svg            mean return across trials with a std band
//!   exploitability.svg    same for the exploitability probe
//! ```
//!
//! Trial `t` runs with seed `config.seed + t`; trials never share state,
//! so scheduling order cannot change any result byte. Wall-clock columns
//! are the single exception to byte determinism.

use crate::config::{ConfigError, ExperimentConfig};
use crate::env::EnvState;
use crate::learner::{self, run_training, LearnerError, Population};
use crate::metrics::{self, MetricsRow};
use crate::nn::MlpParams;
use crate::plot::{self, PlotPoint, Series};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("output directory `{0}` already exists; pass --force to replace it")]
    OutDirExists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    BadFile { path: PathBuf, message: String },
}

impl RunnerError {
    /// True for errors a user fixes by editing inputs (CLI exit 1);
    /// false for filesystem-level failures (CLI exit 2).
    pub fn is_validation(&self) -> bool {
        matches!(self, RunnerError::Config(_) | RunnerError::Learner(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

/// One finished trial: its seed, the per-iteration record, and the final
/// population (kept so exports can write a checkpoint).
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial_index: usize,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub final_pop: Population,
}

/// Per-iteration statistics across trials. Exploitability entries exist
/// only on iterations where the probe ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerIteration {
    pub k: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub exploitability_mean: Option<f64>,
    pub exploitability_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub trial_seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
}

/// The contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub per_k: Vec<PerIteration>,
    pub metadata: RunMetadata,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(ExperimentConfig::parse(&text)?)
}

/// Runs all trials of `config` on up to `workers` threads. Results come
/// back indexed by trial, independent of scheduling.
pub fn run_trials(
    config: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<TrialResult>, RunnerError> {
    let grid = config.grid_config()?;
    let hyper = config.hyper();
    let trials = config.trials;
    let workers = workers.clamp(1, trials);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TrialResult, LearnerError>>>> =
        (0..trials).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= trials {
                    break;
                }
                let seed = config.seed.wrapping_add(t as u64);
                let outcome =
                    run_training(grid.clone(), hyper.clone(), seed, config.exploitability_every)
                        .map(|(pop, rows)| TrialResult {
                            trial_index: t,
                            seed,
                            rows,
                            final_pop: pop,
                        });
                *slots[t].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap()
                .expect("every trial slot is filled before the scope ends")
                .map_err(RunnerError::from)
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Cross-trial statistics per iteration; input rows must all have the
/// same length (each trial runs the same K).
pub fn summarize(config: &ExperimentConfig, results: &[TrialResult]) -> Summary {
    let k_iters = results.first().map_or(0, |r| r.rows.len());
    let per_k = (0..k_iters)
        .map(|k| {
            let returns: Vec<f64> = results.iter().map(|r| r.rows[k].mean_return).collect();
            let (return_mean, return_std) = mean_std(&returns);
            let exploits: Vec<f64> =
                results.iter().filter_map(|r| r.rows[k].exploitability).collect();
            let (exploitability_mean, exploitability_std) = if exploits.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&exploits);
                (Some(m), Some(s))
            };
            PerIteration { k, return_mean, return_std, exploitability_mean, exploitability_std }
        })
        .collect();
    Summary {
        config: config.clone(),
        per_k,
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            trial_seeds: results.iter().map(|r| r.seed).collect(),
            checkpoints: results
                .iter()
                .map(|r| format!("trial_{}/checkpoint", r.trial_index))
                .collect(),
        },
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn trial_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("k,mean_return,std_return,exploitability,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.k,
            r.mean_return,
            r.std_return,
            csv_field(r.exploitability),
            r.seconds
        ));
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointState {
    iteration: u64,
    trial_seed: u64,
    env: EnvState,
}

const CHECKPOINT_STATE: &str = "state.json";
const CHECKPOINT_CONFIG: &str = "config.txt";

fn write_checkpoint(
    dir: &Path,
    config: &ExperimentConfig,
    trial: &TrialResult,
) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join(CHECKPOINT_CONFIG);
    fs::write(&cfg_path, config.echo()).map_err(io_err(&cfg_path))?;
    let iteration = trial.rows.len() as u64;
    let state = CheckpointState {
        iteration,
        trial_seed: trial.seed,
        env: trial.final_pop.env.clone(),
    };
    let state_path = dir.join(CHECKPOINT_STATE);
    let json = serde_json::to_string_pretty(&state).expect("checkpoint state serializes");
    fs::write(&state_path, json).map_err(io_err(&state_path))?;
    for (i, l) in trial.final_pop.learners.iter().enumerate() {
        let mut bytes = iteration.to_le_bytes().to_vec();
        bytes.extend_from_slice(&l.params.serialize());
        let path = dir.join(format!("agent_{i}.bin"));
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Rebuilds a population from a checkpoint directory; returns it with
/// the config and the iteration the checkpoint was taken at.
pub fn load_checkpoint(dir: &Path) -> Result<(ExperimentConfig, Population, u64), RunnerError> {
    let cfg_path = dir.join(CHECKPOINT_CONFIG);
    let config = load_config(&cfg_path)?;
    let state_path = dir.join(CHECKPOINT_STATE);
    let state_text = fs::read_to_string(&state_path).map_err(io_err(&state_path))?;
    let state: CheckpointState =
        serde_json::from_str(&state_text).map_err(|e| RunnerError::BadFile {
            path: state_path.clone(),
            message: e.to_string(),
        })?;
    let mut params = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        let path = dir.join(format!("agent_{i}.bin"));
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() < 8 {
            return Err(RunnerError::BadFile {
                path,
                message: "file too short for an iteration header".to_string(),
            });
        }
        let iter = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if iter != state.iteration {
            return Err(RunnerError::BadFile {
                path,
                message: format!(
                    "iteration {iter} disagrees with the recorded {}",
                    state.iteration
                ),
            });
        }
        let p = MlpParams::deserialize(&bytes[8..]).map_err(|e| RunnerError::BadFile {
            path,
            message: e.to_string(),
        })?;
        params.push(p);
    }
    let grid = config.grid_config()?;
    let pop = Population::from_saved_params(grid, config.hyper(), state.trial_seed, state.env, params)?;
    Ok((config, pop, state.iteration))
}

/// Loads a checkpoint and runs the exploitability probe against it.
pub fn exploit_checkpoint(dir: &Path) -> Result<f64, RunnerError> {
    let (_, pop, iteration) = load_checkpoint(dir)?;
    let eval_seed = learner::exploit_seed(pop.master_seed, iteration);
    Ok(metrics::approximate_exploitability(&pop, eval_seed)?)
}

/// Writes CSVs, checkpoints, the summary, and the config echo under
/// `out_dir`. An existing directory is replaced only with `force`.
pub fn export_results(
    config: &ExperimentConfig,
    results: &[TrialResult],
    out_dir: &Path,
    force: bool,
) -> Result<Summary, RunnerError> {
    if out_dir.exists() {
        if !force {
            return Err(RunnerError::OutDirExists(out_dir.to_path_buf()));
        }
        fs::remove_dir_all(out_dir).map_err(io_err(out_dir))?;
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let cfg_path = out_dir.join("config.txt");
    fs::write(&cfg_path, config.echo()).map_err(io_err(&cfg_path))?;
    for trial in results {
        let csv_path = out_dir.join(format!("trial_{}.csv", trial.trial_index));
        fs::write(&csv_path, trial_csv(&trial.rows)).map_err(io_err(&csv_path))?;
        let ckpt_dir = out_dir.join(format!("trial_{}", trial.trial_index)).join("checkpoint");
        write_checkpoint(&ckpt_dir, config, trial)?;
    }
    let summary = summarize(config, results);
    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, json).map_err(io_err(&summary_path))?;
    Ok(summary)
}

/// Variant name and summary pairs found under `dir`: either `dir` itself
/// holds a `summary.json`, or each child directory holding one becomes a
/// variant named after the child.
pub fn collect_summaries(dir: &Path) -> Result<Vec<(String, Summary)>, RunnerError> {
    let read_summary = |path: &Path| -> Result<Summary, RunnerError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| RunnerError::BadFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    };
    let own = dir.join("summary.json");
    if own.exists() {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        return Ok(vec![(name, read_summary(&own)?)]);
    }
    let mut variants = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut children: Vec<PathBuf> =
        entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    children.sort();
    for child in children {
        let s = child.join("summary.json");
        if s.exists() {
            let name = child
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            variants.push((name, read_summary(&s)?));
        }
    }
    if variants.is_empty() {
        return Err(RunnerError::BadFile {
            path: dir.to_path_buf(),
            message: "no summary.json found here or in any child directory".to_string(),
        });
    }
    Ok(variants)
}

/// Renders the two standard plots into `out_dir` from named summaries.
pub fn emit_plots(variants: &[(String, Summary)], out_dir: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let return_series: Vec<Series> = variants
        .iter()
        .map(|(name, s)| Series {
            label: name.clone(),
            points: s
                .per_k
                .iter()
                .map(|p| PlotPoint { x: p.k as f64, mean: p.return_mean, std: p.return_std })
                .collect(),
        })
        .collect();
    let exploit_series: Vec<Series> = variants
        .iter()
        .map(|(name, s)| Series {
            label: name.clone(),
            points: s
                .per_k
                .iter()
                .filter_map(|p| {
                    p.exploitability_mean.map(|mean| PlotPoint {
                        x: p.k as f64,
                        mean,
                        std: p.exploitability_std.unwrap_or(0.0),
                    })
                })
                .collect(),
        })
        .collect();
    let return_svg = plot::render(
        "Mean discounted return per iteration",
        "iteration",
        "mean return",
        &return_series,
    );
    let path = out_dir.join("return.svg");
    fs::write(&path, return_svg).map_err(io_err(&path))?;
    let exploit_svg = plot::render(
        "Approximate exploitability per iteration",
        "iteration",
        "exploitability",
        &exploit_series,
    );
    let path = out_dir.join("exploitability.svg");
    fs::write(&path, exploit_svg).map_err(io_err(&path))?;
    Ok(())
}

/// The `run` subcommand: config in, full output directory out.
pub fn run_experiment(
    config_path: &Path,
    out_dir: &Path,
    force: bool,
    workers: usize,
) -> Result<Summary, RunnerError> {
    let config = load_config(config_path)?;
    // Refuse before computing, not after hours of work.
    if out_dir.exists() && !force {
        return Err(RunnerError::OutDirExists(out_dir.to_path_buf()));
    }
    let results = run_trials(&config, workers)?;
    let summary = export_results(&config, &results, out_dir, force)?;
    let name = out_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    emit_plots(&[(name, summary.clone())], out_dir)?;
    Ok(summary)
}
