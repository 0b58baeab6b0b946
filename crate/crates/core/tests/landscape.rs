mod common;

use common::{gaussian, random_batch, rng, small_task};
use gcsam_core::landscape::center_hash;
use gcsam_core::optim::inner;
use gcsam_core::{
    loss_surface, make_directions, sharpness_probe, synth_task, Normalization, Objective, PromptObjective, TaskConfig,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

/// `0.5 p^T H p + b^T p` with a random symmetric positive semi-definite `H`.
struct RandomQuadratic {
    h: Array2<f64>,
    b: Array2<f64>,
}

impl RandomQuadratic {
    fn new(dim: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let a = gaussian((dim, dim), &mut r, 1.0);
        let b = gaussian((1, dim), &mut r, 1.0);
        Self { h: a.t().dot(&a), b }
    }
}

impl Objective for RandomQuadratic {
    fn loss_and_grad(&self, p: &Array2<f64>) -> gcsam_core::Result<(f64, Array2<f64>)> {
        let x = p.row(0);
        let hx = self.h.dot(&x);
        let loss = 0.5 * x.dot(&hx) + self.b.row(0).dot(&x);
        let g = (&hx + &self.b.row(0)).insert_axis(ndarray::Axis(0)).to_owned();
        Ok((loss, g))
    }
}

#[test]
fn first_order_probe_dominates_random_probes_on_quadratics() {
    for seed in 0..20 {
        let dim = 2 + seed as usize % 7;
        let q = RandomQuadratic::new(dim, seed);
        let mut r = rng(100 + seed);
        let center = gaussian((1, dim), &mut r, 1.0);
        let p = sharpness_probe(&q, &center, 1e-3, 1000, seed, 1e-12).unwrap();
        assert!(p.sam_gap >= 0.95 * p.max_random_gap, "seed {seed}: {p:?}");
    }
}

#[test]
fn linear_objective_slices_are_linear() {
    // L(p) = <c, p>: every slice is exactly linear in (alpha, beta)
    struct Linear(Array2<f64>);
    impl Objective for Linear {
        fn loss_and_grad(&self, p: &Array2<f64>) -> gcsam_core::Result<(f64, Array2<f64>)> {
            Ok((inner(&self.0, p), self.0.clone()))
        }
    }
    let mut r = rng(4);
    let obj = Linear(gaussian((3, 5), &mut r, 1.0));
    let center = gaussian((3, 5), &mut r, 1.0);
    let dirs = make_directions(&center, 9, Normalization::Global, true).unwrap();
    let grid = loss_surface(&obj, &center, &dirs, (-1.0, 1.0), Some((-2.0, 2.0)), (7, 9)).unwrap();
    let base = inner(&obj.0, &center);
    let (s1, s2) = (inner(&obj.0, &dirs.d1), inner(&obj.0, dirs.d2.as_ref().unwrap()));
    for ((i, j), &l) in grid.losses.indexed_iter() {
        let want = base + grid.alphas[i] * s1 + grid.betas[j] * s2;
        assert!((l - want).abs() < 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn center_cell_is_exact_on_the_prompt_objective() {
    let task = synth_task(&TaskConfig::default(), 1).unwrap();
    let batch = task.seen_train_batch();
    let obj = PromptObjective { task: &task, batch: &batch };
    let mut r = rng(2);
    let center = gaussian((4, task.token_dim()), &mut r, 0.2);
    let dirs = make_directions(&center, 0, Normalization::PerToken, true).unwrap();
    let grid = loss_surface(&obj, &center, &dirs, (-1.0, 1.0), Some((-0.5, 0.5)), (8, 5)).unwrap();
    let want = obj.loss(&center).unwrap();
    assert_eq!(grid.center_loss().unwrap().to_bits(), want.to_bits());
    assert!(grid.min_loss <= want);
    assert_eq!(grid.center_hash(), center_hash(&center));
}

#[test]
fn one_dimensional_grid_has_a_single_column() {
    let q = RandomQuadratic::new(3, 0);
    let center = Array2::from_elem((1, 3), 0.5);
    let dirs = make_directions(&center, 1, Normalization::PerToken, false).unwrap();
    let grid = loss_surface(&q, &center, &dirs, (-1.0, 1.0), None, (11, 0)).unwrap();
    assert_eq!(grid.losses.dim(), (11, 1));
    assert!(!grid.is_2d());
    assert!(loss_surface(&q, &center, &dirs, (-1.0, 1.0), Some((-1.0, 1.0)), (11, 11)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_token_directions_match_row_norms(seed in any::<u64>(), n in 1usize..5, d in 2usize..20) {
        let mut r = rng(seed);
        let scale = r.random_range(0.01..10.0);
        let mut center = gaussian((n, d), &mut r, scale);
        if n > 1 && r.random_bool(0.3) {
            center.row_mut(0).fill(0.0);
        }
        let dirs = make_directions(&center, seed, Normalization::PerToken, true).unwrap();
        let d2 = dirs.d2.as_ref().unwrap();
        for t in 0..n {
            let c = center.row(t).dot(&center.row(t)).sqrt();
            let target = if c > 0.0 { c } else { 1.0 };
            for dir in [&dirs.d1, d2] {
                let rn = dir.row(t).dot(&dir.row(t)).sqrt();
                prop_assert!((rn - target).abs() <= 1e-12 * target);
            }
            let dot = dirs.d1.row(t).dot(&d2.row(t));
            prop_assert!(dot.abs() <= 1e-10 * target * target);
        }
    }

    #[test]
    fn slices_are_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let task = small_task(&mut r);
        let batch = random_batch(&task, &mut r);
        let obj = PromptObjective { task: &task, batch: &batch };
        let center = gaussian((2, task.token_dim()), &mut r, 0.5);
        let dirs = make_directions(&center, seed, Normalization::PerToken, true).unwrap();
        let a = loss_surface(&obj, &center, &dirs, (-1.0, 1.0), Some((-1.0, 1.0)), (5, 4)).unwrap();
        let b = loss_surface(&obj, &center, &make_directions(&center, seed, Normalization::PerToken, true).unwrap(),
            (-1.0, 1.0), Some((-1.0, 1.0)), (5, 4)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn probe_gap_is_non_negative_for_convex_objectives(seed in any::<u64>(), rho in 1e-3f64..1.0) {
        let q = RandomQuadratic::new(4, seed);
        let mut r = rng(seed ^ 1);
        let center = gaussian((1, 4), &mut r, 1.0);
        let p = sharpness_probe(&q, &center, rho, 8, seed, 1e-12).unwrap();
        prop_assert!(p.sam_gap >= 0.0);
    }
}
