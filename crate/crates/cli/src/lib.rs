//! Command-line driver: task synthesis, training, sweeps, landscapes,
//! gradient diagnostics and the two-minima benchmark.
//!
//! Every command validates its config before computing, writes all artifacts
//! after computation finishes, and records `resolved_config.json` plus a
//! `provenance.json` that is excluded from determinism checks.

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gcsam_core::harness::RESULT_SCHEMA_VERSION;
use gcsam_core::io::GridMeta;
use gcsam_core::landscape::center_hash;
use gcsam_core::{
    init_prompt, loss_surface, make_directions, run, run_many, run_on_task, sharpness_probe, sweep, synth_task,
    two_minima_benchmark, Aggregate, Error, ExperimentConfig, Objective, PromptObjective, RunResult, SyntheticTask,
};
use serde::{Deserialize, Serialize};

use config::{CenterSource, LabConfig, ResolvedConfig, CONFIG_SCHEMA_VERSION};
use output::Artifacts;

#[derive(Debug, Parser)]
#[command(name = "gcsam", version, about = "Sharpness-aware prompt tuning laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config, or a resolved_config.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Dotted-path override, e.g. `optimizer.rho=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel seeds and grid cells.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Use this task.json instead of generating tasks.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Read an existing run.json (landscape and diag).
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a task and write task.json.
    Synth(Common),
    /// Train every seed and write run.json and trace_<seed>.csv.
    Train(Common),
    /// Sweep one hyperparameter and write sweep.csv and sweep.json.
    Sweep(Common),
    /// Slice the training loss around a prompt and write grid.csv and grid_meta.json.
    Landscape(Common),
    /// Per-step gradient cosine trace and branch histogram.
    Diag(Common),
    /// Compare the optimizers on the two-minima objective.
    Bench2min(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Sweep(_) => "sweep",
            Command::Landscape(_) => "landscape",
            Command::Diag(_) => "diag",
            Command::Bench2min(_) => "bench2min",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Train(c)
            | Command::Sweep(c)
            | Command::Landscape(c)
            | Command::Diag(c)
            | Command::Bench2min(c) => c,
        }
    }
}

/// Process exit status for an error: 2 for numerical aborts, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

/// Loads the config file, then applies overrides and flags.
pub fn resolve_config(common: &Common) -> anyhow::Result<LabConfig> {
    let mut cfg = config::apply_overrides(config::load(common.config.as_deref())?, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.experiment.seeds = vec![seed];
    }
    if let Some(p) = &common.task {
        cfg.task_path = Some(p.clone());
    }
    if let Some(p) = &common.run {
        cfg.landscape.run_path = Some(p.clone());
        cfg.diag.run_path = Some(p.clone());
    }
    Ok(cfg)
}

/// Runs one command. On failure the caller writes error.json via [`report_error`].
pub fn execute(cmd: &Command, argv: &[String]) -> anyhow::Result<()> {
    let common = cmd.common();
    if let Some(n) = common.threads {
        // a pool that already exists (tests, repeated calls) is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve_config(common)?;
    let mut art = Artifacts::new(&common.out);
    art.json(
        "resolved_config.json",
        &ResolvedConfig { schema_version: CONFIG_SCHEMA_VERSION, command: cmd.name().into(), config: cfg.clone() },
    )?;
    art.json("provenance.json", &output::provenance(cmd.name(), argv, common.threads))?;
    match cmd {
        Command::Synth(_) => cmd_synth(&cfg, &mut art)?,
        Command::Train(_) => cmd_train(&cfg, &mut art)?,
        Command::Sweep(_) => cmd_sweep(&cfg, &mut art)?,
        Command::Landscape(_) => cmd_landscape(&cfg, &mut art)?,
        Command::Diag(_) => cmd_diag(&cfg, &mut art)?,
        Command::Bench2min(_) => cmd_bench2min(&cfg, &mut art)?,
    }
    art.flush()
}

/// Writes error.json into the output directory (best effort).
pub fn report_error(out: &Path, err: &anyhow::Error) {
    let doc = output::error_doc(err, exit_code(err));
    let _ = std::fs::create_dir_all(out);
    if let Ok(text) = serde_json::to_string_pretty(&doc) {
        let _ = std::fs::write(out.join("error.json"), text + "\n");
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v = serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))?;
    Ok(v)
}

fn load_task(path: &Path, exp: &mut ExperimentConfig) -> anyhow::Result<SyntheticTask> {
    let task: SyntheticTask = read_json(path)?;
    exp.task = task.config().clone();
    exp.task_seed = Some(task.seed());
    Ok(task)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDocument {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
}

fn train_all(cfg: &LabConfig) -> anyhow::Result<RunDocument> {
    let mut exp = cfg.experiment.clone();
    let batch = match &cfg.task_path {
        Some(p) => {
            let task = load_task(p, &mut exp)?;
            exp.validate()?;
            use rayon::prelude::*;
            let runs = exp.seeds.par_iter().map(|&s| run_on_task(&exp, &task, s)).collect::<Result<Vec<_>, _>>()?;
            let aggregate = Aggregate::of(&runs);
            gcsam_core::BatchResult { runs, aggregate }
        }
        None => run_many(&exp)?,
    };
    Ok(RunDocument {
        schema_version: RESULT_SCHEMA_VERSION,
        config: exp.resolved(),
        runs: batch.runs,
        aggregate: batch.aggregate,
    })
}

fn cmd_synth(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let exp = &cfg.experiment;
    exp.task.validate()?;
    let seed = exp.task_seed.unwrap_or(exp.seeds.first().copied().unwrap_or(0));
    let task = synth_task(&exp.task, seed)?;
    art.json("task.json", &task)
}

fn cmd_train(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    cfg.experiment.validate()?;
    let doc = train_all(cfg)?;
    for r in &doc.runs {
        art.trace(&format!("trace_{}.csv", r.seed), &r.records)?;
    }
    art.json("run.json", &doc)
}

fn cmd_sweep(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    cfg.experiment.validate()?;
    if cfg.task_path.is_some() {
        return Err(Error::config("sweep generates its own tasks; task_path is not supported").into());
    }
    if cfg.sweep.values.is_empty() {
        return Err(Error::config("sweep.values must be non-empty").into());
    }
    let res = sweep(&cfg.experiment, cfg.sweep.parameter, &cfg.sweep.values)?;
    art.text("sweep.csv", output::sweep_csv(&res))?;
    art.json("sweep.json", &res)
}

fn pick_run(runs: Vec<RunResult>, seed: Option<u64>) -> anyhow::Result<RunResult> {
    let n = runs.len();
    match seed {
        Some(s) => runs.into_iter().find(|r| r.seed == s),
        None => runs.into_iter().next(),
    }
    .ok_or_else(|| Error::config(format!("requested run not found among {n} runs")).into())
}

/// Center prompt, its task and the run it came from (if any).
fn landscape_center(cfg: &LabConfig) -> anyhow::Result<(SyntheticTask, ndarray::Array2<f64>, Option<RunResult>)> {
    let mut exp = cfg.experiment.clone();
    let ls = &cfg.landscape;
    if let Some(path) = &ls.run_path {
        let doc: RunDocument = read_json(path)?;
        let run = pick_run(doc.runs, ls.run_seed)?;
        let task = synth_task(&doc.config.task, run.task_seed)?;
        let center = run.final_prompt.tokens().clone();
        return Ok((task, center, Some(run)));
    }
    let seed = ls.run_seed.unwrap_or(exp.seeds[0]);
    let task = match &cfg.task_path {
        Some(p) => load_task(p, &mut exp)?,
        None => synth_task(&exp.task, exp.task_seed_for(seed))?,
    };
    exp.validate()?;
    match ls.center {
        CenterSource::Init => {
            let p = init_prompt(exp.init_mode, exp.n_tokens, task.token_dim(), seed)?;
            Ok((task, p.into_tokens(), None))
        }
        CenterSource::Trained => {
            let r = run_on_task(&exp, &task, seed)?;
            Ok((task, r.final_prompt.tokens().clone(), Some(r)))
        }
    }
}

#[derive(Debug, Serialize)]
struct LandscapeMeta {
    #[serde(flatten)]
    grid: GridMeta,
    run_seed: Option<u64>,
    run_final_loss_ce: Option<f64>,
    probe_rho: f64,
    sam_gap: f64,
    max_random_gap: f64,
}

fn cmd_landscape(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let ls = &cfg.landscape;
    if ls.run_path.is_none() {
        cfg.experiment.validate()?;
    }
    let (task, center, run) = landscape_center(cfg)?;
    let dirs = make_directions(&center, ls.direction_seed, ls.normalization, ls.two_d)?;
    let batch = task.seen_train_batch();
    let obj = PromptObjective { task: &task, batch: &batch };
    let beta = ls.two_d.then_some((ls.beta_range[0], ls.beta_range[1]));
    let grid = loss_surface(
        &obj,
        &center,
        &dirs,
        (ls.alpha_range[0], ls.alpha_range[1]),
        beta,
        (ls.resolution[0], ls.resolution[1]),
    )?;
    let rho = cfg.experiment.probe_rho;
    let probe = sharpness_probe(&obj, &center, rho, 256, ls.direction_seed, cfg.experiment.optimizer.grad_eps)?;
    debug_assert_eq!(grid.center_hash(), center_hash(&center));
    let meta = LandscapeMeta {
        grid: GridMeta::of(&grid),
        run_seed: run.as_ref().map(|r| r.seed),
        run_final_loss_ce: run.as_ref().map(|r| r.final_loss_ce),
        probe_rho: rho,
        sam_gap: probe.sam_gap,
        max_random_gap: probe.max_random_gap,
    };
    art.grid("grid.csv", &grid)?;
    art.json("grid_meta.json", &meta)
}

fn cmd_diag(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let runs = match &cfg.diag.run_path {
        Some(p) => read_json::<RunDocument>(p)?.runs,
        None => {
            cfg.experiment.validate()?;
            let seed = cfg.experiment.seeds[0];
            let mut exp = cfg.experiment.clone();
            match &cfg.task_path {
                Some(p) => {
                    let task = load_task(p, &mut exp)?;
                    vec![run_on_task(&exp, &task, seed)?]
                }
                None => vec![run(&exp, seed)?],
            }
        }
    };
    if cfg.diag.histogram_bins == 0 {
        return Err(Error::config("diag.histogram_bins must be >= 1").into());
    }
    let run = runs.into_iter().next().ok_or_else(|| Error::config("run.json holds no runs"))?;
    art.text("cos_trace.csv", output::cos_trace_csv(&run.records))?;
    art.json("diag.json", &output::diag_summary(&run, cfg.diag.histogram_bins))
}

fn cmd_bench2min(cfg: &LabConfig, art: &mut Artifacts) -> anyhow::Result<()> {
    let b = &cfg.bench2min;
    if b.rho_list.is_empty() {
        return Err(Error::config("bench2min.rho_list must be non-empty").into());
    }
    let report = two_minima_benchmark(&b.setup, &b.rho_list)?;
    art.json("bench.json", &report)
}

/// Loss of `prompt` on all seen-class training samples.
pub fn training_loss(task: &SyntheticTask, prompt: &ndarray::Array2<f64>) -> gcsam_core::Result<f64> {
    let batch = task.seen_train_batch();
    PromptObjective { task, batch: &batch }.loss(prompt)
}
