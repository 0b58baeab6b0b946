//! CSV and JSON writers for traces and landscape grids.
//!
//! Floats are written with Rust's `Display`, which is locale independent and
//! round-trips exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::landscape::{LandscapeGrid, Normalization, NON_FINITE_SENTINEL};
use crate::optim::StepRecord;

pub const TRACE_COLUMNS: [&str; 9] =
    ["step", "loss_ce", "loss_sam", "grad_norm_ce", "grad_norm_sam", "cos_theta", "branch", "grad_evals", "lr_t"];

pub const GRID_SCHEMA_VERSION: u32 = 1;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(records: &[StepRecord], mut w: W) -> Result<()> {
    writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step_index,
            r.loss_ce,
            opt(r.loss_sam),
            r.grad_norm_ce,
            opt(r.grad_norm_sam),
            opt(r.cos_theta),
            r.branch.map(|b| b.as_str()).unwrap_or(""),
            r.grad_evals,
            r.lr_t
        )?;
    }
    Ok(())
}

/// Long form `alpha,beta,loss`; `beta` is empty for 1D grids.
pub fn write_grid_csv<W: Write>(grid: &LandscapeGrid, mut w: W) -> Result<()> {
    writeln!(w, "alpha,beta,loss")?;
    for ((i, j), loss) in grid.losses.indexed_iter() {
        let beta = grid.betas.get(j).map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", grid.alphas[i], beta, loss)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub schema_version: u32,
    /// SHA-256 of the center's little-endian f64 bytes.
    pub center_hash: String,
    pub seed: u64,
    pub normalization: Normalization,
    pub alpha_range: (f64, f64),
    pub beta_range: Option<(f64, f64)>,
    pub resolution: (usize, usize),
    pub min_loss: f64,
    pub min_coords: (usize, usize),
    pub min_alpha: f64,
    pub min_beta: Option<f64>,
    pub center_loss: Option<f64>,
    pub non_finite_sentinel: f64,
    pub non_finite_cells: Vec<(usize, usize)>,
}

impl GridMeta {
    pub fn of(grid: &LandscapeGrid) -> GridMeta {
        let first_last = |v: &[f64]| (v[0], v[v.len() - 1]);
        let (i, j) = grid.min_coords;
        GridMeta {
            schema_version: GRID_SCHEMA_VERSION,
            center_hash: grid.center_hash(),
            seed: grid.directions.seed,
            normalization: grid.directions.normalization,
            alpha_range: first_last(&grid.alphas),
            beta_range: (!grid.betas.is_empty()).then(|| first_last(&grid.betas)),
            resolution: (grid.alphas.len(), grid.betas.len()),
            min_loss: grid.min_loss,
            min_coords: grid.min_coords,
            min_alpha: grid.alphas[i],
            min_beta: grid.betas.get(j).copied(),
            center_loss: grid.center_loss(),
            non_finite_sentinel: NON_FINITE_SENTINEL,
            non_finite_cells: grid.non_finite.clone(),
        }
    }
}
