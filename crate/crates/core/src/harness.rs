//! End-to-end training runs, metrics, seed aggregation and sweeps.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::sharpness_probe;
use crate::model::{
    accuracy, init_prompt, synth_task, Batch, InitMode, PromptObjective, PromptParams, SyntheticTask, TaskConfig,
};
use crate::optim::{step, Objective, OptimizerConfig, OptimizerKind, OptimizerState, Schedule, StepRecord};
use crate::rng::{stream_rng, STREAM_SHUFFLE};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// `2 s u / (s + u)`, or 0 when both are 0.
pub fn harmonic_mean(seen: f64, unseen: f64) -> f64 {
    if seen + unseen == 0.0 {
        return 0.0;
    }
    2.0 * seen * unseen / (seen + unseen)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub hm: f64,
}

/// Held-out accuracy on each split, with the softmax restricted to that split.
pub fn evaluate(prompt: &PromptParams, task: &SyntheticTask) -> Result<Metrics> {
    let seen_acc = accuracy(prompt, &task.seen_test_samples(), task.seen_classes(), task)?;
    let unseen_acc = accuracy(prompt, &task.unseen_test_samples(), task.unseen_classes(), task)?;
    Ok(Metrics { seen_acc, unseen_acc, hm: harmonic_mean(seen_acc, unseen_acc) })
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub init_mode: InitMode,
    /// Context tokens per prompt.
    pub n_tokens: usize,
    /// Evaluate held-out metrics every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Radius of the final sharpness probe.
    pub probe_rho: f64,
    /// Fixed task seed; when absent every run seed generates its own task.
    pub task_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 50,
            batch_size: 32,
            seeds: default_seeds(),
            init_mode: InitMode::Template,
            n_tokens: 4,
            eval_every: 0,
            probe_rho: 0.1,
            task_seed: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be non-empty"));
        }
        if self.n_tokens == 0 {
            return Err(Error::config("n_tokens must be >= 1"));
        }
        let n_train = self.task.n_seen() * self.task.shots;
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::config(format!(
                "batch_size must be in [1, {n_train}] (seen-class training samples), got {}",
                self.batch_size
            )));
        }
        if !(self.probe_rho > 0.0 && self.probe_rho.is_finite()) {
            return Err(Error::config("probe_rho must be > 0"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.task.n_seen() * self.task.shots).div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    /// Copy with run-length dependent settings filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Schedule::Cosine { total_steps: 0 } = c.optimizer.schedule {
            c.optimizer.schedule = Schedule::Cosine { total_steps: self.total_steps() };
        }
        c
    }

    pub fn task_seed_for(&self, seed: u64) -> u64 {
        self.task_seed.unwrap_or(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub task_seed: u64,
    pub kind: OptimizerKind,
    pub final_prompt: PromptParams,
    pub records: Vec<StepRecord>,
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub hm: f64,
    /// Cross-entropy over all seen-class training samples.
    pub initial_loss_ce: f64,
    pub final_loss_ce: f64,
    pub final_sam_gap: f64,
    /// Gradient evaluations counted at the objective during training.
    pub grad_evals: u64,
    /// Mean per-step gradient cosine, when the optimizer records one.
    pub mean_cos_theta: Option<f64>,
    pub evals: Vec<EvalPoint>,
}

/// Mean of the per-step cosines, or `None` if no record has one.
pub fn mean_cos_theta(records: &[StepRecord]) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter_map(|r| r.cos_theta).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

struct Counted<'a, O> {
    inner: O,
    count: &'a AtomicUsize,
}

impl<O: Objective> Objective for Counted<'_, O> {
    fn loss_and_grad(&self, params: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.loss_and_grad(params)
    }
}

/// Builds the task for `seed` and trains on it.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let task = synth_task(&cfg.task, cfg.task_seed_for(seed))?;
    run_on_task(cfg, &task, seed)
}

/// Trains a prompt on an existing task. Deterministic in `(cfg, task, seed)`.
pub fn run_on_task(cfg: &ExperimentConfig, task: &SyntheticTask, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    if task.config().token_dim != cfg.task.token_dim {
        return Err(Error::config("task token dimension does not match the experiment config"));
    }
    let cfg = cfg.resolved();
    let prompt = init_prompt(cfg.init_mode, cfg.n_tokens, task.token_dim(), seed)?;
    let full = task.seen_train_batch();
    let full_obj = PromptObjective { task, batch: &full };
    let initial_loss_ce = full_obj.loss(prompt.tokens())?;

    let mut order = task.seen_train_samples();
    if cfg.batch_size > order.len() {
        return Err(Error::config("batch_size exceeds the seen-class training samples"));
    }
    let count = AtomicUsize::new(0);
    let mut state = OptimizerState::new(prompt);
    let mut records = Vec::with_capacity(cfg.total_steps());
    let mut evals = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(seed, STREAM_SHUFFLE, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch { samples: chunk.to_vec(), classes: task.seen_classes().to_vec() };
            let obj = Counted { inner: PromptObjective { task, batch: &batch }, count: &count };
            let (next, rec) = step(&state, &cfg.optimizer, &obj)?;
            state = next;
            records.push(rec);
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
            evals.push(EvalPoint { epoch: epoch + 1, metrics: evaluate(&state.params, task)? });
        }
    }

    let final_prompt = state.params;
    let metrics = evaluate(&final_prompt, task)?;
    let final_loss_ce = full_obj.loss(final_prompt.tokens())?;
    let probe = sharpness_probe(&full_obj, final_prompt.tokens(), cfg.probe_rho, 1, seed, cfg.optimizer.grad_eps)?;
    Ok(RunResult {
        seed,
        task_seed: cfg.task_seed_for(seed),
        kind: cfg.optimizer.kind,
        mean_cos_theta: mean_cos_theta(&records),
        final_prompt,
        records,
        seen_acc: metrics.seen_acc,
        unseen_acc: metrics.unseen_acc,
        hm: metrics.hm,
        initial_loss_ce,
        final_loss_ce,
        final_sam_gap: probe.sam_gap,
        grad_evals: count.load(Ordering::Relaxed) as u64,
        evals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub seen_acc: Stat,
    pub unseen_acc: Stat,
    pub hm: Stat,
    pub final_loss_ce: Stat,
    pub final_sam_gap: Stat,
    pub mean_cos_theta: Option<Stat>,
}

impl Aggregate {
    /// Folds runs in the given order. `runs` must be non-empty.
    pub fn of(runs: &[RunResult]) -> Aggregate {
        let col = |f: fn(&RunResult) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>()).expect("non-empty runs");
        let cos: Vec<f64> = runs.iter().filter_map(|r| r.mean_cos_theta).collect();
        Aggregate {
            n_runs: runs.len(),
            seen_acc: col(|r| r.seen_acc),
            unseen_acc: col(|r| r.unseen_acc),
            hm: col(|r| r.hm),
            final_loss_ce: col(|r| r.final_loss_ce),
            final_sam_gap: col(|r| r.final_sam_gap),
            mean_cos_theta: if cos.len() == runs.len() { Stat::of(&cos) } else { None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub runs: Vec<RunResult>,
    pub aggregate: Aggregate,
}

/// One run per configured seed, in parallel, collected in seed order.
///
/// If any run fails the batch fails with the completed runs attached.
pub fn run_many(cfg: &ExperimentConfig) -> Result<BatchResult> {
    cfg.validate()?;
    let outcomes: Vec<Result<RunResult>> = cfg.seeds.par_iter().map(|&s| run(cfg, s)).collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut config_error = None;
    for (&seed, out) in cfg.seeds.iter().zip(outcomes) {
        match out {
            Ok(r) => runs.push(r),
            Err(e @ Error::Config(_)) => {
                config_error.get_or_insert(e);
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if let Some(e) = config_error {
        return Err(e);
    }
    if !failures.is_empty() {
        return Err(Error::BatchAborted { completed: runs, failures });
    }
    let aggregate = Aggregate::of(&runs);
    Ok(BatchResult { runs, aggregate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Rho,
    Beta1,
    Beta2,
    Shots,
    TokenLength,
    InitMode,
    NoiseLevel,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::Beta1 => "beta1",
            SweepParam::Beta2 => "beta2",
            SweepParam::Shots => "shots",
            SweepParam::TokenLength => "token_length",
            SweepParam::InitMode => "init_mode",
            SweepParam::NoiseLevel => "noise_level",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rho" => SweepParam::Rho,
            "beta1" => SweepParam::Beta1,
            "beta2" => SweepParam::Beta2,
            "shots" => SweepParam::Shots,
            "token_length" | "n_tokens" => SweepParam::TokenLength,
            "init_mode" => SweepParam::InitMode,
            "noise_level" => SweepParam::NoiseLevel,
            other => return Err(Error::config(format!("unknown sweep parameter '{other}'"))),
        })
    }
}

/// A swept value: a number, or a name for `init_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Num(f64),
    Text(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Num(v) => write!(f, "{v}"),
            SweepValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for SweepValue {
    fn from(v: f64) -> Self {
        SweepValue::Num(v)
    }
}

impl From<&str> for SweepValue {
    fn from(s: &str) -> Self {
        SweepValue::Text(s.to_string())
    }
}

impl SweepValue {
    fn number(&self) -> Result<f64> {
        match self {
            SweepValue::Num(v) => Ok(*v),
            SweepValue::Text(s) => s.parse().map_err(|_| Error::config(format!("'{s}' is not a number"))),
        }
    }

    fn count(&self) -> Result<usize> {
        let v = self.number()?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::config(format!("'{self}' is not a non-negative integer")));
        }
        Ok(v as usize)
    }
}

/// Copy of `base` with one parameter overridden, validated.
pub fn apply_override(base: &ExperimentConfig, param: SweepParam, value: &SweepValue) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match param {
        SweepParam::Rho => c.optimizer.rho = value.number()?,
        SweepParam::Beta1 => c.optimizer.beta1 = value.number()?,
        SweepParam::Beta2 => c.optimizer.beta2 = value.number()?,
        SweepParam::Shots => c.task.shots = value.count()?,
        SweepParam::TokenLength => c.n_tokens = value.count()?,
        SweepParam::NoiseLevel => c.task.noise_level = value.number()?,
        SweepParam::InitMode => {
            c.init_mode = match value {
                SweepValue::Text(s) => s.parse()?,
                SweepValue::Num(_) => return Err(Error::config("init_mode takes a mode name")),
            }
        }
    }
    // thresholds only constrain GCSAM, but a beta sweep is meaningless if they cross
    if matches!(param, SweepParam::Beta1 | SweepParam::Beta2) {
        crate::optim::check_thresholds(c.optimizer.beta1, c.optimizer.beta2)?;
    }
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: SweepValue,
    pub aggregate: Aggregate,
    /// Per-seed harmonic means, in seed order.
    pub hm_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSkip {
    pub value: SweepValue,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub parameter: SweepParam,
    pub values: Vec<SweepValue>,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SweepSkip>,
}

/// Runs every seed for every value. Values that fail validation or abort
/// numerically are skipped with a diagnostic.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[SweepValue]) -> Result<SweepResult> {
    base.validate()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for value in values {
        let cfg = match apply_override(base, param, value) {
            Ok(c) => c,
            Err(e) => {
                skipped.push(SweepSkip { value: value.clone(), reason: e.to_string() });
                continue;
            }
        };
        match run_many(&cfg) {
            Ok(b) => rows.push(SweepRow {
                value: value.clone(),
                hm_per_seed: b.runs.iter().map(|r| r.hm).collect(),
                aggregate: b.aggregate,
            }),
            Err(e) => skipped.push(SweepSkip { value: value.clone(), reason: e.to_string() }),
        }
    }
    Ok(SweepResult { schema_version: RESULT_SCHEMA_VERSION, parameter: param, values: values.to_vec(), rows, skipped })
}
