//! Loss-landscape slices along filter-normalized random directions, and
//! scalar sharpness probes.
//!
//! Prompt parameters have no convolution filters, so normalization is done
//! per token row: each row of a direction is rescaled to the norm of the
//! matching row of the center.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{inner, norm, sam_perturbation, Objective};
use crate::rng::{stream_rng, STREAM_DIRECTIONS, STREAM_PROBE};

/// Value stored for grid cells whose loss was not finite.
pub const NON_FINITE_SENTINEL: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerToken,
    Global,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_token" => Ok(Normalization::PerToken),
            "global" => Ok(Normalization::Global),
            "none" => Ok(Normalization::None),
            other => Err(Error::config(format!("unknown normalization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDirections {
    pub d1: Array2<f64>,
    pub d2: Option<Array2<f64>>,
    pub normalization: Normalization,
    pub seed: u64,
}

fn gaussian_like(shape: (usize, usize), rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

fn rescale_rows(dir: &mut Array2<f64>, center: &Array2<f64>) {
    for (mut row, c) in dir.rows_mut().into_iter().zip(center.rows()) {
        let target = c.dot(&c).sqrt();
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            // zero center rows keep a unit-norm direction row
            let t = if target > 0.0 { target } else { 1.0 };
            row *= t / n;
        }
    }
}

/// Samples slice directions around `center`. Deterministic in `seed`.
///
/// In 2D mode the second direction is orthogonalized against the first row by
/// row before any rescaling, so orthogonality survives per-token scaling.
pub fn make_directions(center: &Array2<f64>, seed: u64, mode: Normalization, want_2d: bool) -> Result<SliceDirections> {
    if center.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("landscape center is not finite".into()));
    }
    let mut rng = stream_rng(seed, STREAM_DIRECTIONS, 0);
    let mut d1 = gaussian_like(center.dim(), &mut rng);
    let mut d2 = if want_2d { Some(gaussian_like(center.dim(), &mut rng)) } else { None };

    if let Some(d2) = d2.as_mut() {
        match mode {
            Normalization::PerToken => {
                if center.ncols() < 2 {
                    return Err(Error::config("2D per-token slices need token dimension >= 2"));
                }
                for (mut b, a) in d2.rows_mut().into_iter().zip(d1.rows()) {
                    let coef = b.dot(&a) / a.dot(&a);
                    b.scaled_add(-coef, &a);
                }
            }
            Normalization::Global | Normalization::None => {
                if center.len() < 2 {
                    return Err(Error::config("2D slices need at least two parameters"));
                }
                let coef = inner(d2, &d1) / inner(&d1, &d1);
                d2.scaled_add(-coef, &d1);
            }
        }
    }

    let normalize = |d: &mut Array2<f64>| match mode {
        Normalization::PerToken => rescale_rows(d, center),
        Normalization::Global => {
            let target = norm(center);
            let t = if target > 0.0 { target } else { 1.0 };
            *d *= t / norm(d);
        }
        Normalization::None => {}
    };
    normalize(&mut d1);
    if let Some(d2) = d2.as_mut() {
        normalize(d2);
    }
    Ok(SliceDirections { d1, d2, normalization: mode, seed })
}

/// Evenly spaced coordinates over `range`, with an exact 0 whenever 0 lies in it.
pub fn axis(range: (f64, f64), resolution: usize) -> Result<Vec<f64>> {
    let (lo, hi) = range;
    if resolution < 2 {
        return Err(Error::config("grid resolution must be >= 2"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::config(format!("invalid range [{lo}, {hi}]")));
    }
    let n = resolution - 1;
    let mut xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    xs[n] = hi;
    if lo <= 0.0 && hi >= 0.0 && !xs.contains(&0.0) {
        let k = (0..=n).min_by(|&a, &b| xs[a].abs().total_cmp(&xs[b].abs())).expect("non-empty axis");
        xs[k] = 0.0;
    }
    Ok(xs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub center: Array2<f64>,
    pub directions: SliceDirections,
    pub alphas: Vec<f64>,
    /// Empty for 1D slices.
    pub betas: Vec<f64>,
    /// `alphas.len()` rows by `max(1, betas.len())` columns.
    pub losses: Array2<f64>,
    pub min_loss: f64,
    pub min_coords: (usize, usize),
    /// Cells holding [`NON_FINITE_SENTINEL`].
    pub non_finite: Vec<(usize, usize)>,
}

impl LandscapeGrid {
    /// Loss at `alpha = beta = 0`, if the grid contains that point.
    pub fn center_loss(&self) -> Option<f64> {
        let i = self.alphas.iter().position(|&a| a == 0.0)?;
        let j = if self.betas.is_empty() { 0 } else { self.betas.iter().position(|&b| b == 0.0)? };
        Some(self.losses[[i, j]])
    }

    pub fn is_2d(&self) -> bool {
        !self.betas.is_empty()
    }

    /// SHA-256 over the little-endian bytes of the center.
    pub fn center_hash(&self) -> String {
        center_hash(&self.center)
    }
}

pub fn center_hash(center: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    for v in center.iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Evaluates `L(center + alpha * d1 + beta * d2)` over the grid.
///
/// Cells are evaluated in parallel and assembled in row-major order; the
/// objective is only read.
pub fn loss_surface<O: Objective + Sync + ?Sized>(
    objective: &O,
    center: &Array2<f64>,
    directions: &SliceDirections,
    alpha_range: (f64, f64),
    beta_range: Option<(f64, f64)>,
    resolution: (usize, usize),
) -> Result<LandscapeGrid> {
    if directions.d1.dim() != center.dim() {
        return Err(Error::config("direction shape does not match center"));
    }
    let alphas = axis(alpha_range, resolution.0)?;
    let betas = match (beta_range, &directions.d2) {
        (Some(r), Some(d2)) => {
            if d2.dim() != center.dim() {
                return Err(Error::config("direction shape does not match center"));
            }
            axis(r, resolution.1)?
        }
        (Some(_), None) => return Err(Error::config("2D grid requested without a second direction")),
        (None, _) => Vec::new(),
    };
    let cols = betas.len().max(1);
    let cells: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();

    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let a = alphas[i];
            let b = betas.get(j).copied().unwrap_or(0.0);
            let loss = if a == 0.0 && b == 0.0 {
                objective.loss(center)
            } else {
                let mut p = center.clone();
                p.scaled_add(a, &directions.d1);
                if let Some(d2) = &directions.d2 {
                    if b != 0.0 {
                        p.scaled_add(b, d2);
                    }
                }
                objective.loss(&p)
            };
            match loss {
                Ok(l) if l.is_finite() => Ok(l),
                Ok(_) | Err(Error::Numerical(_)) => Ok(NON_FINITE_SENTINEL),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let losses = Array2::from_shape_vec((alphas.len(), cols), values).expect("grid shape");
    let mut non_finite = Vec::new();
    let mut min_loss = f64::INFINITY;
    let mut min_coords = (0, 0);
    for ((i, j), &l) in losses.indexed_iter() {
        if l == NON_FINITE_SENTINEL {
            non_finite.push((i, j));
        } else if l < min_loss {
            min_loss = l;
            min_coords = (i, j);
        }
    }
    Ok(LandscapeGrid {
        center: center.clone(),
        directions: directions.clone(),
        alphas,
        betas,
        losses,
        min_loss,
        min_coords,
        non_finite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpnessProbe {
    /// `L(center + eps_hat) - L(center)` with the first-order worst perturbation.
    pub sam_gap: f64,
    /// Largest loss increase over uniform samples of the rho-sphere.
    pub max_random_gap: f64,
}

/// Sharpness around `center` at radius `rho`. Deterministic in `seed`.
pub fn sharpness_probe<O: Objective + ?Sized>(
    objective: &O,
    center: &Array2<f64>,
    rho: f64,
    n_samples: usize,
    seed: u64,
    grad_eps: f64,
) -> Result<SharpnessProbe> {
    if !(rho > 0.0) || n_samples == 0 {
        return Err(Error::config("sharpness probe needs rho > 0 and n_samples >= 1"));
    }
    let (base, grad) = objective.loss_and_grad(center)?;
    let eps = sam_perturbation(&grad, rho, grad_eps);
    let sam_gap = objective.loss(&(center + &eps))? - base;

    let mut rng = stream_rng(seed, STREAM_PROBE, 0);
    let mut max_random_gap = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let mut u = gaussian_like(center.dim(), &mut rng);
        let n = norm(&u);
        if n == 0.0 {
            continue;
        }
        u *= rho / n;
        max_random_gap = max_random_gap.max(objective.loss(&(center + &u))? - base);
    }
    Ok(SharpnessProbe { sam_gap, max_random_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    struct HalfSquare;
    impl Objective for HalfSquare {
        fn loss_and_grad(&self, p: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            Ok((0.5 * inner(p, p), p.clone()))
        }
    }

    struct Linear(Array2<f64>);
    impl Objective for Linear {
        fn loss_and_grad(&self, p: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            Ok((inner(&self.0, p), self.0.clone()))
        }
    }

    #[test]
    fn axis_contains_exact_zero() {
        let xs = axis((-1.0, 1.0), 41).unwrap();
        assert_eq!(xs.len(), 41);
        assert_eq!(xs[20], 0.0);
        assert_eq!(xs[0], -1.0);
        assert_eq!(xs[40], 1.0);
        let odd = axis((-0.3, 0.7), 4).unwrap();
        assert!(odd.contains(&0.0));
        assert!(axis((0.0, 1.0), 1).is_err());
        assert!(axis((1.0, 0.0), 5).is_err());
    }

    #[test]
    fn quadratic_1d_slice() {
        let center = array![[0.0, 0.0]];
        let dirs = SliceDirections { d1: array![[1.0, 0.0]], d2: None, normalization: Normalization::None, seed: 0 };
        let g = loss_surface(&HalfSquare, &center, &dirs, (-1.0, 1.0), None, (3, 0)).unwrap();
        assert_eq!(g.losses.column(0).to_vec(), vec![0.5, 0.0, 0.5]);
        assert_eq!(g.min_loss, 0.0);
        assert_eq!(g.min_coords, (1, 0));
        assert_eq!(g.center_loss(), Some(0.0));
    }

    #[test]
    fn even_objective_gives_symmetric_grid() {
        let center = Array2::zeros((2, 3));
        let dirs = make_directions(&center, 4, Normalization::PerToken, true).unwrap();
        let g = loss_surface(&HalfSquare, &center, &dirs, (-1.0, 1.0), Some((-1.0, 1.0)), (9, 9)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_relative_eq!(g.losses[[i, j]], g.losses[[8 - i, 8 - j]], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn per_token_rows_match_center_rows() {
        let center = array![[1.0, 0.0, 0.0], [0.0, 3.0, 4.0], [0.0, 0.0, 0.0]];
        let dirs = make_directions(&center, 9, Normalization::PerToken, true).unwrap();
        for d in [&dirs.d1, dirs.d2.as_ref().unwrap()] {
            let norms: Vec<f64> = d.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
            assert_relative_eq!(norms[0], 1.0, epsilon = 1e-12);
            assert_relative_eq!(norms[1], 5.0, epsilon = 1e-12);
            assert_relative_eq!(norms[2], 1.0, epsilon = 1e-12);
        }
        let d2 = dirs.d2.as_ref().unwrap();
        assert!(inner(&dirs.d1, d2).abs() / (norm(&dirs.d1) * norm(d2)) < 1e-10);
        assert_eq!(dirs, make_directions(&center, 9, Normalization::PerToken, true).unwrap());
    }

    #[test]
    fn global_normalization_matches_center_norm() {
        let center = array![[1.0, 2.0], [2.0, 4.0]];
        let dirs = make_directions(&center, 1, Normalization::Global, true).unwrap();
        assert_relative_eq!(norm(&dirs.d1), 5.0, epsilon = 1e-12);
        let d2 = dirs.d2.unwrap();
        assert!(inner(&dirs.d1, &d2).abs() / (norm(&dirs.d1) * norm(&d2)) < 1e-10);
    }

    #[test]
    fn non_finite_cells_are_flagged() {
        struct Hole;
        impl Objective for Hole {
            fn loss_and_grad(&self, p: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
                let x = p[[0, 0]];
                Ok((if x > 0.5 { f64::NAN } else { x * x }, p.clone()))
            }
        }
        let dirs = SliceDirections { d1: array![[1.0]], d2: None, normalization: Normalization::None, seed: 0 };
        let g = loss_surface(&Hole, &array![[0.0]], &dirs, (-1.0, 1.0), None, (5, 0)).unwrap();
        assert_eq!(g.non_finite, vec![(4, 0)]);
        assert_eq!(g.losses[[4, 0]], NON_FINITE_SENTINEL);
        assert_eq!(g.min_loss, 0.0);
    }

    #[test]
    fn probe_closed_forms() {
        let rho = 0.3;
        let p = sharpness_probe(&HalfSquare, &Array2::zeros((1, 4)), rho, 50, 1, 1e-12).unwrap();
        assert_eq!(p.sam_gap, 0.0);
        assert_relative_eq!(p.max_random_gap, 0.5 * rho * rho, epsilon = 1e-14);

        let g = array![[1.0, -2.0, 2.0]];
        let p = sharpness_probe(&Linear(g.clone()), &array![[0.5, 0.1, 0.0]], rho, 10, 2, 1e-12).unwrap();
        assert_relative_eq!(p.sam_gap, rho * 3.0, epsilon = 1e-12);
        assert!(p.max_random_gap <= p.sam_gap + 1e-12);
    }

    #[test]
    fn probe_is_monotone_in_rho_for_convex() {
        let c = array![[0.4, -0.2, 1.0]];
        let mut last = f64::NEG_INFINITY;
        for rho in [0.01, 0.05, 0.1, 0.5, 1.0] {
            let p = sharpness_probe(&HalfSquare, &c, rho, 1, 0, 1e-12).unwrap();
            assert!(p.sam_gap >= last);
            last = p.sam_gap;
        }
    }
}
