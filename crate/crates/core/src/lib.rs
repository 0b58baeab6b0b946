//! Sharpness-aware prompt tuning on a frozen synthetic encoder.
//!
//! Provides ERM, SAM and gradient-constrained SAM (GCSAM) optimizers, a toy
//! few-shot prompt-classification objective with seen and unseen classes,
//! loss-landscape slices, and a seeded experiment harness.
//!
//! ```
//! use gcsam_core::{run, ExperimentConfig, OptimizerKind};
//!
//! let mut cfg = ExperimentConfig::default();
//! cfg.optimizer.kind = OptimizerKind::Gcsam;
//! cfg.epochs = 2;
//! let result = run(&cfg, 0).unwrap();
//! assert!(result.hm >= 0.0 && result.hm <= 1.0);
//! ```

pub mod error;
pub mod harness;
pub mod io;
pub mod landscape;
pub mod model;
pub mod optim;
pub mod rng;
pub mod two_minima;

pub use error::{Error, Result};
pub use harness::{
    evaluate, harmonic_mean, run, run_many, run_on_task, sweep, Aggregate, BatchResult, ExperimentConfig, Metrics,
    RunResult, Stat, SweepParam, SweepResult, SweepValue,
};
pub use landscape::{loss_surface, make_directions, sharpness_probe, LandscapeGrid, Normalization, SliceDirections};
pub use model::{
    encode_text, init_prompt, loss_and_grad, predict_proba, synth_task, Batch, InitMode, PromptObjective, PromptParams,
    SyntheticTask, TaskConfig,
};
pub use optim::{
    gcsam_gradient, grad_cosine, sam_loss_and_grad, sam_perturbation, step, Branch, Objective, OptimizerConfig,
    OptimizerKind, OptimizerState, Schedule, StepRecord,
};
pub use two_minima::{two_minima_benchmark, TwoMinimaReport, TwoMinimaSetup, TwoWells};
