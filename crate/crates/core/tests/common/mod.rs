#![allow(dead_code)]

use gcsam_core::{synth_task, Batch, SyntheticTask, TaskConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(shape: (usize, usize), rng: &mut ChaCha8Rng, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

/// A small random task; cheap enough for property tests.
pub fn small_task(rng: &mut ChaCha8Rng) -> SyntheticTask {
    let shots = rng.random_range(1..=3);
    let cfg = TaskConfig {
        n_classes: rng.random_range(2..=6),
        shots,
        samples_per_class: shots + rng.random_range(1..=3),
        token_dim: rng.random_range(2..=16),
        feature_dim: rng.random_range(2..=12),
        temperature: 10f64.powf(rng.random_range(-2.0..0.0)),
        noise_level: rng.random_range(0.0..3.0),
        signal_strength: rng.random_range(0.5..2.0),
        nonlinear: rng.random_bool(0.5),
        ..TaskConfig::default()
    };
    synth_task(&cfg, rng.random()).expect("valid task config")
}

/// Random non-empty batch, restricted to either all classes or the seen ones.
pub fn random_batch(task: &SyntheticTask, rng: &mut ChaCha8Rng) -> Batch {
    let (pool, classes) = if rng.random_bool(0.5) {
        ((0..task.n_samples()).collect::<Vec<_>>(), (0..task.n_classes()).collect::<Vec<_>>())
    } else {
        (task.seen_train_samples(), task.seen_classes().to_vec())
    };
    let n = rng.random_range(1..=pool.len());
    let samples = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    Batch::new(task, samples, classes).expect("valid batch")
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
