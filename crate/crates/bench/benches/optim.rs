use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gcsam_core::{
    gcsam_gradient, init_prompt, loss_and_grad, loss_surface, make_directions, run, step, synth_task, Batch,
    ExperimentConfig, InitMode, Normalization, OptimizerConfig, OptimizerKind, OptimizerState, PromptObjective,
    TaskConfig,
};

fn setup() -> (gcsam_core::SyntheticTask, gcsam_core::PromptParams) {
    let task = synth_task(&TaskConfig::default(), 0).unwrap();
    let prompt = init_prompt(InitMode::Template, 4, task.token_dim(), 0).unwrap();
    (task, prompt)
}

fn bench_loss_and_grad(c: &mut Criterion) {
    let (task, prompt) = setup();
    let mut group = c.benchmark_group("loss_and_grad");
    for bs in [32usize, 160] {
        let batch = Batch::new(&task, task.seen_train_samples()[..bs].to_vec(), task.seen_classes().to_vec()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(bs), &batch, |b, batch| {
            b.iter(|| loss_and_grad(black_box(prompt.tokens()), batch, &task).unwrap())
        });
    }
    group.finish();
}

fn bench_step(c: &mut Criterion) {
    let (task, prompt) = setup();
    let batch = Batch::new(&task, task.seen_train_samples()[..32].to_vec(), task.seen_classes().to_vec()).unwrap();
    let obj = PromptObjective { task: &task, batch: &batch };
    let state = OptimizerState::new(prompt);
    let mut group = c.benchmark_group("step");
    for kind in [OptimizerKind::Erm, OptimizerKind::Sam, OptimizerKind::Gcsam] {
        let cfg = OptimizerConfig::default().with_kind(kind);
        group.bench_function(kind.as_str(), |b| b.iter(|| step(black_box(&state), &cfg, &obj).unwrap()));
    }
    group.finish();
}

fn bench_gcsam_gradient(c: &mut Criterion) {
    let (task, prompt) = setup();
    let batch = task.seen_train_batch();
    let (_, g_ce) = loss_and_grad(prompt.tokens(), &batch, &task).unwrap();
    let (_, g_sam) = loss_and_grad(&(prompt.tokens() + 0.05), &batch, &task).unwrap();
    c.bench_function("gcsam_gradient", |b| {
        b.iter(|| gcsam_gradient(black_box(&g_sam), black_box(&g_ce), 0.5, 0.8, 1e-12).unwrap())
    });
}

fn bench_loss_surface(c: &mut Criterion) {
    let (task, prompt) = setup();
    let batch = task.seen_train_batch();
    let obj = PromptObjective { task: &task, batch: &batch };
    let dirs = make_directions(prompt.tokens(), 0, Normalization::PerToken, true).unwrap();
    let mut group = c.benchmark_group("loss_surface");
    group.sample_size(10);
    group.bench_function("21x21", |b| {
        b.iter(|| loss_surface(&obj, prompt.tokens(), &dirs, (-1.0, 1.0), Some((-1.0, 1.0)), (21, 21)).unwrap())
    });
    group.finish();
}

fn bench_run(c: &mut Criterion) {
    let cfg = ExperimentConfig { epochs: 5, ..ExperimentConfig::default() };
    let mut group = c.benchmark_group("run_5_epochs");
    group.sample_size(10);
    for kind in [OptimizerKind::Erm, OptimizerKind::Gcsam] {
        let mut cfg = cfg.clone();
        cfg.optimizer.kind = kind;
        group.bench_function(kind.as_str(), |b| b.iter(|| run(black_box(&cfg), 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_loss_and_grad, bench_step, bench_gcsam_gradient, bench_loss_surface, bench_run);
criterion_main!(benches);
