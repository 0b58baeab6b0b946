//! ERM, SAM and gradient-constrained SAM as single-step state transitions.
//!
//! Every optimizer computes an update gradient, adds weight decay, feeds it
//! through heavy-ball momentum and applies the scheduled learning rate:
//!
//! ```text
//! g_eff = g + wd * v
//! m     = mu * m + g_eff
//! v     = v - lr_t * m
//! ```
//!
//! The update gradient `g` is `grad_ce` for ERM, the gradient at the
//! perturbed point for SAM, and the three-branch constrained gradient for
//! GCSAM.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PromptParams;

/// A differentiable scalar objective over a parameter matrix.
pub trait Objective {
    fn loss_and_grad(&self, params: &Array2<f64>) -> Result<(f64, Array2<f64>)>;

    fn loss(&self, params: &Array2<f64>) -> Result<f64> {
        self.loss_and_grad(params).map(|(l, _)| l)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn loss_and_grad(&self, params: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        (**self).loss_and_grad(params)
    }

    fn loss(&self, params: &Array2<f64>) -> Result<f64> {
        (**self).loss(params)
    }
}

/// Wraps an objective and counts gradient evaluations.
#[derive(Debug, Default)]
pub struct CountingObjective<O> {
    inner: O,
    evals: AtomicUsize,
}

impl<O> CountingObjective<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, evals: AtomicUsize::new(0) }
    }

    pub fn evals(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Objective> Objective for CountingObjective<O> {
    fn loss_and_grad(&self, params: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        self.inner.loss_and_grad(params)
    }

    // Loss-only evaluations are not gradient evaluations.
    fn loss(&self, params: &Array2<f64>) -> Result<f64> {
        self.inner.loss(params)
    }
}

/// Frobenius norm over all entries.
pub fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Flattened inner product.
pub fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn check_shapes(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::config(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Worst-case first-order perturbation `rho * grad / ||grad||`, or zero when
/// the gradient norm is below `grad_eps`.
pub fn sam_perturbation(grad: &Array2<f64>, rho: f64, grad_eps: f64) -> Array2<f64> {
    let n = norm(grad);
    if n < grad_eps || rho == 0.0 {
        return Array2::zeros(grad.raw_dim());
    }
    grad * (rho / n)
}

/// Result of one sharpness-aware evaluation.
#[derive(Debug, Clone)]
pub struct SamEval {
    pub loss_sam: f64,
    pub grad_sam: Array2<f64>,
    pub loss_ce: f64,
    pub grad_ce: Array2<f64>,
}

/// Evaluates the objective at `params` and at `params + eps_hat`.
///
/// `grad_sam` is the gradient at the perturbed point, used as the update
/// direction at `params`. Always exactly two gradient evaluations.
pub fn sam_loss_and_grad<O: Objective + ?Sized>(
    objective: &O,
    params: &Array2<f64>,
    rho: f64,
    grad_eps: f64,
) -> Result<SamEval> {
    let (loss_ce, grad_ce) = objective.loss_and_grad(params)?;
    let eps = sam_perturbation(&grad_ce, rho, grad_eps);
    let perturbed = params + &eps;
    let (loss_sam, grad_sam) = objective.loss_and_grad(&perturbed)?;
    if !loss_sam.is_finite() {
        return Err(Error::Numerical(format!("loss at perturbed point is {loss_sam}")));
    }
    Ok(SamEval { loss_sam, grad_sam, loss_ce, grad_ce })
}

/// Cosine of the angle between two gradients, clamped to [-1, 1].
///
/// Returns 1 when either norm is below `grad_eps`.
pub fn grad_cosine(g1: &Array2<f64>, g2: &Array2<f64>, grad_eps: f64) -> Result<f64> {
    check_shapes(g1, g2)?;
    let (n1, n2) = (norm(g1), norm(g2));
    if n1 < grad_eps || n2 < grad_eps {
        return Ok(1.0);
    }
    Ok((inner(g1, g2) / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Which case of the constrained-gradient rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `cos <= beta1`: plain cross-entropy gradient.
    Low,
    /// `beta1 < cos < beta2`: SAM gradient projected on the mean direction.
    Mid,
    /// `cos >= beta2`: plain SAM gradient.
    High,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Low => "low",
            Branch::Mid => "mid",
            Branch::High => "high",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn check_thresholds(beta1: f64, beta2: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&beta1) || !(-1.0..=1.0).contains(&beta2) || !(beta1 < beta2) {
        return Err(Error::config(format!(
            "thresholds must satisfy -1 <= beta1 < beta2 <= 1 (got beta1={beta1}, beta2={beta2})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GcsamOutput {
    pub grad: Array2<f64>,
    pub branch: Branch,
    pub cos_theta: f64,
}

/// Gradient-constrained SAM update direction.
///
/// In the middle band the SAM gradient is projected onto
/// `g_mid = (grad_sam + grad_ce) / 2`. Ties go to the outer branches.
pub fn gcsam_gradient(
    grad_sam: &Array2<f64>,
    grad_ce: &Array2<f64>,
    beta1: f64,
    beta2: f64,
    grad_eps: f64,
) -> Result<GcsamOutput> {
    check_thresholds(beta1, beta2)?;
    let cos_theta = grad_cosine(grad_sam, grad_ce, grad_eps)?;
    if cos_theta <= beta1 {
        return Ok(GcsamOutput { grad: grad_ce.clone(), branch: Branch::Low, cos_theta });
    }
    if cos_theta >= beta2 {
        return Ok(GcsamOutput { grad: grad_sam.clone(), branch: Branch::High, cos_theta });
    }
    let mid = (grad_sam + grad_ce) * 0.5;
    let mid_sq = inner(&mid, &mid);
    if mid_sq.sqrt() < grad_eps {
        // near-antiparallel gradients of equal norm
        return Ok(GcsamOutput { grad: grad_ce.clone(), branch: Branch::Low, cos_theta });
    }
    let coef = inner(grad_sam, &mid) / mid_sq;
    Ok(GcsamOutput { grad: mid * coef, branch: Branch::Mid, cos_theta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Erm,
    Sam,
    Gcsam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Erm => "erm",
            OptimizerKind::Sam => "sam",
            OptimizerKind::Gcsam => "gcsam",
        }
    }

    /// Gradient evaluations per step.
    pub fn grad_evals(self) -> u32 {
        match self {
            OptimizerKind::Erm => 1,
            OptimizerKind::Sam | OptimizerKind::Gcsam => 2,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "erm" | "sgd" => Ok(OptimizerKind::Erm),
            "sam" => Ok(OptimizerKind::Sam),
            "gcsam" => Ok(OptimizerKind::Gcsam),
            other => Err(Error::config(format!("unknown optimizer kind '{other}'"))),
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over `total_steps`.
    /// `total_steps = 0` means "fill in from the run length".
    Cosine {
        #[serde(default)]
        total_steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub grad_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Gcsam,
            rho: 0.1,
            beta1: 0.5,
            beta2: 0.8,
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::Cosine { total_steps: 0 },
            grad_eps: 1e-12,
        }
    }
}

impl OptimizerConfig {
    pub fn with_kind(mut self, kind: OptimizerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        if !(self.grad_eps >= 0.0) {
            return bad(format!("grad_eps must be >= 0, got {}", self.grad_eps));
        }
        if self.kind == OptimizerKind::Gcsam {
            check_thresholds(self.beta1, self.beta2)?;
        }
        Ok(())
    }

    /// Learning rate used at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant | Schedule::Cosine { total_steps: 0 } => self.lr,
            Schedule::Cosine { total_steps } => {
                let t = step.min(total_steps) as f64 / total_steps as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub params: PromptParams,
    pub velocity: Array2<f64>,
    pub step_index: usize,
}

impl OptimizerState {
    pub fn new(params: PromptParams) -> Self {
        let velocity = Array2::zeros(params.tokens().raw_dim());
        Self { params, velocity, step_index: 0 }
    }
}

/// Per-step telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub loss_ce: f64,
    pub loss_sam: Option<f64>,
    pub grad_norm_ce: f64,
    pub grad_norm_sam: Option<f64>,
    /// Cosine between SAM and CE gradients (SAM and GCSAM).
    pub cos_theta: Option<f64>,
    /// GCSAM only.
    pub branch: Option<Branch>,
    pub grad_evals: u32,
    pub lr_t: f64,
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// One optimizer step. Pure: the input state is not modified.
pub fn step<O: Objective + ?Sized>(
    state: &OptimizerState,
    cfg: &OptimizerConfig,
    objective: &O,
) -> Result<(OptimizerState, StepRecord)> {
    let params = state.params.tokens();
    check_shapes(params, &state.velocity)?;
    let lr_t = cfg.lr_at(state.step_index);
    let mut record = StepRecord {
        step_index: state.step_index,
        loss_ce: f64::NAN,
        loss_sam: None,
        grad_norm_ce: f64::NAN,
        grad_norm_sam: None,
        cos_theta: None,
        branch: None,
        grad_evals: cfg.kind.grad_evals(),
        lr_t,
    };
    let abort = |reason: &str, record: &StepRecord| Error::NonFiniteStep {
        reason: reason.to_string(),
        record: Box::new(record.clone()),
    };

    let update = match cfg.kind {
        OptimizerKind::Erm => {
            let (loss, grad) = objective.loss_and_grad(params)?;
            record.loss_ce = loss;
            record.grad_norm_ce = norm(&grad);
            grad
        }
        OptimizerKind::Sam | OptimizerKind::Gcsam => {
            let eval = match sam_loss_and_grad(objective, params, cfg.rho, cfg.grad_eps) {
                Ok(e) => e,
                Err(Error::Numerical(m)) => return Err(abort(&m, &record)),
                Err(e) => return Err(e),
            };
            record.loss_ce = eval.loss_ce;
            record.loss_sam = Some(eval.loss_sam);
            record.grad_norm_ce = norm(&eval.grad_ce);
            record.grad_norm_sam = Some(norm(&eval.grad_sam));
            if cfg.kind == OptimizerKind::Sam {
                record.cos_theta = Some(grad_cosine(&eval.grad_sam, &eval.grad_ce, cfg.grad_eps)?);
                eval.grad_sam
            } else {
                let out = gcsam_gradient(&eval.grad_sam, &eval.grad_ce, cfg.beta1, cfg.beta2, cfg.grad_eps)?;
                record.cos_theta = Some(out.cos_theta);
                record.branch = Some(out.branch);
                out.grad
            }
        }
    };
    if !record.loss_ce.is_finite() {
        return Err(abort("loss is not finite", &record));
    }
    if !all_finite(&update) {
        return Err(abort("gradient is not finite", &record));
    }

    let mut velocity = state.velocity.clone();
    Zip::from(&mut velocity).and(&update).and(params).for_each(|m, &g, &v| {
        *m = cfg.momentum * *m + (g + cfg.weight_decay * v);
    });
    let mut next = params.clone();
    next.scaled_add(-lr_t, &velocity);
    if !all_finite(&next) {
        return Err(abort("parameter update is not finite", &record));
    }
    let params = PromptParams::new(next).map_err(|_| abort("parameter update is not finite", &record))?;
    Ok((OptimizerState { params, velocity, step_index: state.step_index + 1 }, record))
}
