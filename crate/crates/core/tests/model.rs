mod common;

use common::{gaussian, random_batch, rng, small_task};
use gcsam_core::harness::evaluate;
use gcsam_core::model::accuracy;
use gcsam_core::{
    encode_text, init_prompt, loss_and_grad, predict_proba, synth_task, Batch, InitMode, PromptParams, TaskConfig,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// Straight-line text encoder used as an oracle.
fn oracle_text(prompt: &Array2<f64>, class: usize, task: &gcsam_core::SyntheticTask) -> Vec<f64> {
    let (n, d) = prompt.dim();
    let mut mean = vec![0.0; d];
    for t in 0..n {
        for j in 0..d {
            mean[j] += prompt[[t, j]];
        }
    }
    for j in 0..d {
        mean[j] = (mean[j] + task.class_tokens()[[class, j]]) / (n as f64 + 1.0);
    }
    let e = task.encoder();
    let mut u: Vec<f64> = (0..e.nrows()).map(|r| (0..d).map(|j| e[[r, j]] * mean[j]).sum()).collect();
    if task.config().nonlinear {
        u.iter_mut().for_each(|v| *v = v.tanh());
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter().map(|v| v / norm).collect()
}

fn central_difference(prompt: &Array2<f64>, batch: &Batch, task: &gcsam_core::SyntheticTask, h: f64) -> Array2<f64> {
    let mut fd = Array2::zeros(prompt.raw_dim());
    for idx in ndarray::indices(prompt.raw_dim()) {
        let mut p = prompt.clone();
        p[idx] += h;
        let up = loss_and_grad(&p, batch, task).unwrap().0;
        p[idx] -= 2.0 * h;
        let down = loss_and_grad(&p, batch, task).unwrap().0;
        fd[idx] = (up - down) / (2.0 * h);
    }
    fd
}

#[test]
fn default_task_text_features_match_oracle() {
    let task = synth_task(&TaskConfig::default(), 3).unwrap();
    let mut r = rng(11);
    let prompt = PromptParams::new(gaussian((4, task.token_dim()), &mut r, 0.3)).unwrap();
    for c in 0..task.n_classes() {
        let got = encode_text(&prompt, c, &task).unwrap();
        let want = oracle_text(prompt.tokens(), c, &task);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn default_task_gradient_matches_finite_differences() {
    let task = synth_task(&TaskConfig::default(), 0).unwrap();
    let prompt = init_prompt(InitMode::Template, 4, task.token_dim(), 0).unwrap();
    let batch = Batch::new(&task, task.seen_train_samples()[..32].to_vec(), task.seen_classes().to_vec()).unwrap();
    let (_, g) = loss_and_grad(prompt.tokens(), &batch, &task).unwrap();
    let fd = central_difference(prompt.tokens(), &batch, &task, 1e-5);
    let err = (&g - &fd).mapv(|v| v * v).sum().sqrt() / g.mapv(|v| v * v).sum().sqrt();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn zero_shot_accuracy_is_between_chance_and_perfect() {
    for seed in 0..5 {
        let task = synth_task(&TaskConfig::default(), seed).unwrap();
        let prompt = init_prompt(InitMode::Template, 4, task.token_dim(), seed).unwrap();
        let m = evaluate(&prompt, &task).unwrap();
        let chance = 1.0 / task.seen_classes().len() as f64;
        assert!(m.seen_acc > chance && m.seen_acc < 0.95, "seed {seed}: {}", m.seen_acc);
    }
}

#[test]
fn noiseless_task_is_separable_by_the_class_prototypes() {
    let cfg = TaskConfig { noise_level: 0.0, ..TaskConfig::default() };
    let task = synth_task(&cfg, 2).unwrap();
    // a prompt of zeros only shrinks the class tokens, so each prototype still wins its own class
    let prompt = PromptParams::zeros(4, task.token_dim()).unwrap();
    let m = evaluate(&prompt, &task).unwrap();
    assert_eq!(m.seen_acc, 1.0);
    assert_eq!(m.unseen_acc, 1.0);
}

#[test]
fn saturated_prompt_gives_chance_accuracy() {
    // tanh saturates on a huge prompt, so every class gets the same text feature
    let cfg = TaskConfig { nonlinear: true, ..TaskConfig::default() };
    let task = synth_task(&cfg, 4).unwrap();
    let mut r = rng(5);
    let huge = PromptParams::new(gaussian((4, task.token_dim()), &mut r, 1e6)).unwrap();
    let samples = task.seen_test_samples();
    let acc = accuracy(&huge, &samples, task.seen_classes(), &task).unwrap();
    let k = task.seen_classes().len() as f64;
    let sd = ((1.0 / k) * (1.0 - 1.0 / k) / samples.len() as f64).sqrt();
    assert!((acc - 1.0 / k).abs() < 4.0 * sd, "accuracy {acc}");
}

#[test]
fn synth_rejects_too_few_samples() {
    let cfg = TaskConfig { samples_per_class: 4, shots: 4, ..TaskConfig::default() };
    assert!(synth_task(&cfg, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_form_a_distribution(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let prompt = PromptParams::new(gaussian((2, task.token_dim()), &mut r, 1.0)).unwrap();
        let batch = random_batch(&task, &mut r);
        for &s in &batch.samples {
            let p = predict_proba(task.feature(s), &prompt, &batch, &task).unwrap();
            prop_assert_eq!(p.len(), batch.classes.len());
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v <= 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn text_features_are_unit_norm(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let prompt = PromptParams::new(gaussian((3, task.token_dim()), &mut r, scale)).unwrap();
        for c in 0..task.n_classes() {
            let w: Array1<f64> = encode_text(&prompt, c, &task).unwrap();
            prop_assert!((w.dot(&w).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_invariant_to_batch_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let prompt = gaussian((2, task.token_dim()), &mut r, 0.5);
        let batch = random_batch(&task, &mut r);
        let mut shuffled = batch.clone();
        shuffled.samples.shuffle(&mut r);
        let (l1, g1) = loss_and_grad(&prompt, &batch, &task).unwrap();
        let (l2, g2) = loss_and_grad(&prompt, &shuffled, &task).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        prop_assert!(common::max_abs_diff(&g1, &g2) <= 1e-12 * g1.iter().fold(1.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let prompt = gaussian((2, task.token_dim()), &mut r, 0.5);
        let batch = random_batch(&task, &mut r);
        let (_, g) = loss_and_grad(&prompt, &batch, &task).unwrap();
        let fd = central_difference(&prompt, &batch, &task, 1e-5);
        let diff = (&g - &fd).mapv(|v| v * v).sum().sqrt();
        let scale = g.mapv(|v| v * v).sum().sqrt().max(fd.mapv(|v| v * v).sum().sqrt()).max(1e-8);
        prop_assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
    }

    #[test]
    fn evaluation_leaves_the_task_untouched(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let before = task.clone();
        let prompt = PromptParams::new(gaussian((2, task.token_dim()), &mut r, 1.0)).unwrap();
        let batch = random_batch(&task, &mut r);
        let a = loss_and_grad(prompt.tokens(), &batch, &task).unwrap();
        let _ = evaluate(&prompt, &task).unwrap();
        let b = loss_and_grad(prompt.tokens(), &batch, &task).unwrap();
        prop_assert_eq!(&task, &before);
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
    }

    #[test]
    fn task_generation_is_seed_deterministic(seed in any::<u64>()) {
        let cfg = TaskConfig { n_classes: 4, token_dim: 8, feature_dim: 6, ..TaskConfig::default() };
        prop_assert_eq!(synth_task(&cfg, seed).unwrap(), synth_task(&cfg, seed).unwrap());
    }
}
