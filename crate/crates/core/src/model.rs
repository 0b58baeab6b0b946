//! Toy prompt-classification objective.
//!
//! A frozen linear "text encoder" maps the mean of the learnable context
//! tokens and a class token to a text feature. Image features are fixed unit
//! vectors. Class probabilities are a temperature-scaled softmax over cosine
//! scores, and the loss is the batch-mean cross-entropy. Only the context
//! tokens are learnable.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_PROMPT, STREAM_TASK};

/// Version of the task JSON document.
pub const TASK_SCHEMA_VERSION: u32 = 1;

/// Fixed seed of the pseudo-template initialization. Shared by every run.
pub const TEMPLATE_SEED: u64 = 0x0a_9407_0f0a;

/// Standard deviation of the gaussian prompt initialization.
pub const GAUSSIAN_INIT_STD: f64 = 0.02;

/// Learnable context: `n_tokens` rows of `dim`-dimensional token vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PromptParams {
    tokens: Array2<f64>,
}

impl PromptParams {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        let (n, d) = tokens.dim();
        if n == 0 || d == 0 {
            return Err(Error::config(format!("prompt must be non-empty, got {n}x{d}")));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("prompt has non-finite entries".into()));
        }
        Ok(Self { tokens })
    }

    pub fn zeros(n_tokens: usize, dim: usize) -> Result<Self> {
        Self::new(Array2::zeros((n_tokens, dim)))
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Number of learnable scalars.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.tokens
    }

    pub fn into_tokens(self) -> Array2<f64> {
        self.tokens
    }
}

impl TryFrom<Vec<Vec<f64>>> for PromptParams {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows_to_array(rows)?)
    }
}

impl From<PromptParams> for Vec<Vec<f64>> {
    fn from(p: PromptParams) -> Self {
        array_to_rows(&p.tokens)
    }
}

pub(crate) fn rows_to_array(rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::config("ragged matrix rows"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| Error::config(e.to_string()))
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Prompt initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Fixed unit-norm pseudo-template, identical for every run.
    Template,
    /// Seeded N(0, 0.02^2) entries.
    Gaussian,
    Zeros,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "template" => Ok(InitMode::Template),
            "gaussian" => Ok(InitMode::Gaussian),
            "zeros" => Ok(InitMode::Zeros),
            other => Err(Error::config(format!("unknown init mode '{other}'"))),
        }
    }
}

pub fn init_prompt(mode: InitMode, n_tokens: usize, dim: usize, seed: u64) -> Result<PromptParams> {
    if n_tokens == 0 || dim == 0 {
        return Err(Error::config("prompt needs at least one token of dimension >= 1"));
    }
    let tokens = match mode {
        InitMode::Zeros => Array2::zeros((n_tokens, dim)),
        InitMode::Gaussian => {
            let mut rng = stream_rng(seed, STREAM_PROMPT, 0);
            let normal = Normal::new(0.0, GAUSSIAN_INIT_STD).expect("valid std");
            Array2::from_shape_simple_fn((n_tokens, dim), || normal.sample(&mut rng))
        }
        InitMode::Template => {
            let mut rng = stream_rng(TEMPLATE_SEED, STREAM_PROMPT, 0);
            let mut t: Array2<f64> = Array2::from_shape_simple_fn((n_tokens, dim), || StandardNormal.sample(&mut rng));
            for mut row in t.rows_mut() {
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            t
        }
    };
    PromptParams::new(tokens)
}

/// Parameters of the synthetic task generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub n_classes: usize,
    /// Fraction of classes in the seen split; seen classes are the lowest indices.
    pub seen_fraction: f64,
    /// Training samples per class.
    pub shots: usize,
    /// Samples generated per class; the ones beyond `shots` form the test split.
    pub samples_per_class: usize,
    pub token_dim: usize,
    pub feature_dim: usize,
    pub temperature: f64,
    /// Norm of the gaussian perturbation added to each class prototype.
    pub noise_level: f64,
    /// Weight of the planted prototype direction inside each class token.
    pub signal_strength: f64,
    /// Apply `tanh` after the frozen linear map.
    pub nonlinear: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            n_classes: 20,
            seen_fraction: 0.5,
            shots: 16,
            samples_per_class: 66,
            token_dim: 128,
            feature_dim: 64,
            temperature: 0.01,
            noise_level: 3.0,
            signal_strength: 1.0,
            nonlinear: false,
        }
    }
}

impl TaskConfig {
    pub fn n_seen(&self) -> usize {
        let n = (self.n_classes as f64 * self.seen_fraction).round() as usize;
        n.clamp(1, self.n_classes.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(m));
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(self.seen_fraction > 0.0 && self.seen_fraction < 1.0) {
            return fail(format!("seen_fraction must be in (0,1), got {}", self.seen_fraction));
        }
        if self.shots == 0 {
            return fail("shots must be >= 1".into());
        }
        if self.samples_per_class <= self.shots {
            return fail(format!(
                "samples_per_class ({}) must exceed shots ({}) to leave a test split",
                self.samples_per_class, self.shots
            ));
        }
        if self.token_dim == 0 || self.feature_dim == 0 {
            return fail("token_dim and feature_dim must be >= 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!("noise_level must be >= 0, got {}", self.noise_level));
        }
        if !self.signal_strength.is_finite() {
            return fail("signal_strength must be finite".into());
        }
        Ok(())
    }
}

/// A frozen synthetic few-shot task with disjoint seen/unseen classes.
///
/// Immutable after construction. Serializes to a versioned JSON document that
/// reproduces the task bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskDocument", into = "TaskDocument")]
pub struct SyntheticTask {
    config: TaskConfig,
    seed: u64,
    /// feature_dim x token_dim
    encoder: Array2<f64>,
    /// n_classes x token_dim
    class_tokens: Array2<f64>,
    /// n_samples x feature_dim, unit rows
    features: Array2<f64>,
    labels: Vec<usize>,
    train_mask: Vec<bool>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    /// Cached `class_tokens * encoder^T`.
    class_proj: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct TaskDocument {
    schema_version: u32,
    seed: u64,
    config: TaskConfig,
    encoder: Vec<Vec<f64>>,
    class_tokens: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    train_mask: Vec<bool>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
}

impl From<SyntheticTask> for TaskDocument {
    fn from(t: SyntheticTask) -> Self {
        TaskDocument {
            schema_version: TASK_SCHEMA_VERSION,
            seed: t.seed,
            encoder: array_to_rows(&t.encoder),
            class_tokens: array_to_rows(&t.class_tokens),
            features: array_to_rows(&t.features),
            config: t.config,
            labels: t.labels,
            train_mask: t.train_mask,
            seen: t.seen,
            unseen: t.unseen,
        }
    }
}

impl TryFrom<TaskDocument> for SyntheticTask {
    type Error = Error;

    fn try_from(doc: TaskDocument) -> Result<Self> {
        if doc.schema_version != TASK_SCHEMA_VERSION {
            return Err(Error::Schema { found: doc.schema_version, expected: TASK_SCHEMA_VERSION });
        }
        SyntheticTask::from_parts(
            doc.config,
            doc.seed,
            rows_to_array(doc.encoder)?,
            rows_to_array(doc.class_tokens)?,
            rows_to_array(doc.features)?,
            doc.labels,
            doc.train_mask,
            doc.seen,
            doc.unseen,
        )
    }
}

impl SyntheticTask {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        config: TaskConfig,
        seed: u64,
        encoder: Array2<f64>,
        class_tokens: Array2<f64>,
        features: Array2<f64>,
        labels: Vec<usize>,
        train_mask: Vec<bool>,
        seen: Vec<usize>,
        unseen: Vec<usize>,
    ) -> Result<Self> {
        let m = class_tokens.nrows();
        let d = class_tokens.ncols();
        if encoder.ncols() != d || encoder.nrows() == 0 {
            return Err(Error::config("encoder shape does not match class tokens"));
        }
        if features.ncols() != encoder.nrows() {
            return Err(Error::config("feature dimension does not match encoder output"));
        }
        if labels.len() != features.nrows() || train_mask.len() != labels.len() {
            return Err(Error::config("labels/train_mask length mismatch"));
        }
        if labels.iter().any(|&l| l >= m) {
            return Err(Error::config("label out of range"));
        }
        let mut cover = vec![0u8; m];
        for &c in seen.iter().chain(&unseen) {
            if c >= m {
                return Err(Error::config("split class out of range"));
            }
            cover[c] += 1;
        }
        if cover.iter().any(|&k| k != 1) {
            return Err(Error::config("seen/unseen must partition the classes"));
        }
        if !(config.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        for row in features.rows() {
            if (row.dot(&row).sqrt() - 1.0).abs() > 1e-9 {
                return Err(Error::config("image features must have unit norm"));
            }
        }
        let class_proj = class_tokens.dot(&encoder.t());
        Ok(Self { config, seed, encoder, class_tokens, features, labels, train_mask, seen, unseen, class_proj })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> usize {
        self.class_tokens.nrows()
    }

    pub fn token_dim(&self) -> usize {
        self.class_tokens.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.nrows()
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn encoder(&self) -> &Array2<f64> {
        &self.encoder
    }

    pub fn class_tokens(&self) -> &Array2<f64> {
        &self.class_tokens
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature(&self, sample: usize) -> ArrayView1<'_, f64> {
        self.features.row(sample)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_train(&self, sample: usize) -> bool {
        self.train_mask[sample]
    }

    pub fn seen_classes(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen_classes(&self) -> &[usize] {
        &self.unseen
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    fn samples_where(&self, classes: &[usize], train: bool) -> Vec<usize> {
        let mut member = vec![false; self.n_classes()];
        for &c in classes {
            member[c] = true;
        }
        (0..self.n_samples()).filter(|&i| self.train_mask[i] == train && member[self.labels[i]]).collect()
    }

    /// Training samples of the seen classes, in storage order.
    pub fn seen_train_samples(&self) -> Vec<usize> {
        self.samples_where(&self.seen, true)
    }

    pub fn seen_test_samples(&self) -> Vec<usize> {
        self.samples_where(&self.seen, false)
    }

    pub fn unseen_test_samples(&self) -> Vec<usize> {
        self.samples_where(&self.unseen, false)
    }

    /// Batch over every seen-class training sample, restricted to seen classes.
    pub fn seen_train_batch(&self) -> Batch {
        Batch { samples: self.seen_train_samples(), classes: self.seen.clone() }
    }

    fn check_prompt(&self, prompt: &Array2<f64>) -> Result<()> {
        if prompt.ncols() != self.token_dim() {
            return Err(Error::config(format!(
                "prompt token dim {} does not match encoder input {}",
                prompt.ncols(),
                self.token_dim()
            )));
        }
        if prompt.nrows() == 0 {
            return Err(Error::config("prompt has no tokens"));
        }
        Ok(())
    }
}

/// Generates a task. Deterministic in `(cfg, seed)`.
///
/// Class prototypes are random unit vectors in feature space. Each class token
/// is `signal_strength * E^T p_m + z_m` with `E` the frozen encoder and `z_m`
/// independent noise, so the encoder maps class tokens near their prototypes.
pub fn synth_task(cfg: &TaskConfig, seed: u64) -> Result<SyntheticTask> {
    cfg.validate()?;
    let (m, d, df) = (cfg.n_classes, cfg.token_dim, cfg.feature_dim);
    let mut rng = stream_rng(seed, STREAM_TASK, 0);
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let enc_scale = 1.0 / (d as f64).sqrt();
    let encoder = Array2::from_shape_fn((df, d), |_| gauss(&mut rng) * enc_scale);

    let mut prototypes = Array2::from_shape_fn((m, df), |_| gauss(&mut rng));
    for mut row in prototypes.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }

    let planted = prototypes.dot(&encoder) * cfg.signal_strength;
    let token_noise = Array2::from_shape_fn((m, d), |_| gauss(&mut rng) * enc_scale);
    let class_tokens = planted + token_noise;

    let n_samples = m * cfg.samples_per_class;
    let mut features = Array2::zeros((n_samples, df));
    let mut labels = Vec::with_capacity(n_samples);
    let mut train_mask = Vec::with_capacity(n_samples);
    let noise_scale = cfg.noise_level / (df as f64).sqrt();
    for c in 0..m {
        for k in 0..cfg.samples_per_class {
            let i = labels.len();
            let proto = prototypes.row(c);
            let mut row = features.row_mut(i);
            if cfg.noise_level == 0.0 {
                row.assign(&proto);
            } else {
                for (dst, &p) in row.iter_mut().zip(proto.iter()) {
                    *dst = p + noise_scale * gauss(&mut rng);
                }
                let n = row.dot(&row).sqrt();
                row /= n;
            }
            labels.push(c);
            train_mask.push(k < cfg.shots);
        }
    }

    let n_seen = cfg.n_seen();
    let seen = (0..n_seen).collect();
    let unseen = (n_seen..m).collect();
    SyntheticTask::from_parts(cfg.clone(), seed, encoder, class_tokens, features, labels, train_mask, seen, unseen)
}

/// Samples and the class set the softmax is restricted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub samples: Vec<usize>,
    pub classes: Vec<usize>,
}

impl Batch {
    pub fn new(task: &SyntheticTask, samples: Vec<usize>, classes: Vec<usize>) -> Result<Self> {
        let b = Batch { samples, classes };
        b.validate(task)?;
        Ok(b)
    }

    pub fn validate(&self, task: &SyntheticTask) -> Result<()> {
        self.class_positions(task).map(|_| ())?;
        if self.samples.is_empty() {
            return Err(Error::InvalidBatch("batch has no samples".into()));
        }
        for &s in &self.samples {
            if s >= task.n_samples() {
                return Err(Error::InvalidBatch(format!("sample {s} out of range")));
            }
            if !self.classes.contains(&task.labels[s]) {
                return Err(Error::InvalidBatch(format!(
                    "sample {s} has label {} outside the restricted classes",
                    task.labels[s]
                )));
            }
        }
        Ok(())
    }

    /// Position of each class inside `classes`, indexed by class id.
    fn class_positions(&self, task: &SyntheticTask) -> Result<Vec<Option<usize>>> {
        if self.classes.is_empty() {
            return Err(Error::InvalidBatch("restricted class set is empty".into()));
        }
        let mut pos = vec![None; task.n_classes()];
        for (k, &c) in self.classes.iter().enumerate() {
            if c >= task.n_classes() {
                return Err(Error::InvalidBatch(format!("class {c} out of range")));
            }
            if pos[c].replace(k).is_some() {
                return Err(Error::InvalidBatch(format!("class {c} listed twice")));
            }
        }
        Ok(pos)
    }
}

/// Text features for a set of classes plus what the backward pass needs.
struct TextForward {
    /// Encoder output before normalization (after the nonlinearity).
    act: Array2<f64>,
    norms: Vec<f64>,
    /// Normalized text features, one row per class.
    text: Array2<f64>,
}

fn text_forward(prompt: &Array2<f64>, classes: &[usize], task: &SyntheticTask) -> Result<TextForward> {
    task.check_prompt(prompt)?;
    let scale = 1.0 / (prompt.nrows() as f64 + 1.0);
    let ctx = task.encoder.dot(&prompt.sum_axis(Axis(0)));
    let mut act = Array2::zeros((classes.len(), task.feature_dim()));
    for (k, &c) in classes.iter().enumerate() {
        let mut row = act.row_mut(k);
        row.assign(&(&ctx + &task.class_proj.row(c)));
        row *= scale;
        if task.config.nonlinear {
            row.mapv_inplace(f64::tanh);
        }
    }
    let mut text = act.clone();
    let mut norms = Vec::with_capacity(classes.len());
    for mut row in text.rows_mut() {
        let n = row.dot(&row).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numerical("text feature has zero or non-finite norm".into()));
        }
        row /= n;
        norms.push(n);
    }
    Ok(TextForward { act, norms, text })
}

/// Normalized text feature of one class under the given prompt.
pub fn encode_text(prompt: &PromptParams, class_index: usize, task: &SyntheticTask) -> Result<Array1<f64>> {
    if class_index >= task.n_classes() {
        return Err(Error::config(format!("class {class_index} out of range")));
    }
    let fwd = text_forward(prompt.tokens(), &[class_index], task)?;
    Ok(fwd.text.row(0).to_owned())
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Class probabilities over `batch.classes` for a unit-norm image feature.
pub fn predict_proba(
    feature: ArrayView1<'_, f64>,
    prompt: &PromptParams,
    batch: &Batch,
    task: &SyntheticTask,
) -> Result<Vec<f64>> {
    batch.class_positions(task)?;
    if feature.len() != task.feature_dim() {
        return Err(Error::config("feature dimension mismatch"));
    }
    if (feature.dot(&feature).sqrt() - 1.0).abs() > 1e-9 {
        return Err(Error::config("image feature must have unit norm"));
    }
    let fwd = text_forward(prompt.tokens(), &batch.classes, task)?;
    let tau = task.temperature();
    let mut logits: Vec<f64> = fwd.text.rows().into_iter().map(|w| w.dot(&feature) / tau).collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Batch-mean cross-entropy and its gradient with respect to the prompt tokens.
pub fn loss_and_grad(prompt: &Array2<f64>, batch: &Batch, task: &SyntheticTask) -> Result<(f64, Array2<f64>)> {
    let pos = batch.class_positions(task)?;
    if batch.samples.is_empty() {
        return Err(Error::InvalidBatch("batch has no samples".into()));
    }
    let fwd = text_forward(prompt, &batch.classes, task)?;
    let tau = task.temperature();
    let k = batch.classes.len();
    let df = task.feature_dim();

    // d loss / d text_row, accumulated as sum_b (p_b - y_b) f_b
    let mut dtext = Array2::<f64>::zeros((k, df));
    let mut loss = 0.0;
    let mut logits = vec![0.0; k];
    for &s in &batch.samples {
        let f = task.features.row(s);
        let y =
            pos[task.labels[s]].ok_or_else(|| Error::InvalidBatch(format!("sample {s} outside restricted classes")))?;
        for (z, w) in logits.iter_mut().zip(fwd.text.rows()) {
            *z = w.dot(&f) / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        // p_y - 1 and the loss are tiny for confident samples; avoid cancellation
        let off_target: f64 = logits.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, z)| (z - lse).exp()).sum();
        loss += if logits[y] == max {
            logits.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, z)| (z - logits[y]).exp()).sum::<f64>().ln_1p()
        } else {
            lse - logits[y]
        };
        for (j, z) in logits.iter().enumerate() {
            let coef = if j == y { -off_target } else { (z - lse).exp() };
            dtext.row_mut(j).scaled_add(coef, &f);
        }
    }
    let nb = batch.samples.len() as f64;
    loss /= nb;
    dtext /= nb * tau;

    // Back through normalization and the optional tanh, summing over classes.
    let mut dpre_sum = Array1::<f64>::zeros(df);
    for j in 0..k {
        let w = fwd.text.row(j);
        let g = dtext.row(j);
        let radial = g.dot(&w);
        let inv = 1.0 / fwd.norms[j];
        if task.config.nonlinear {
            let a = fwd.act.row(j);
            for ((dst, (&gi, &wi)), &ai) in dpre_sum.iter_mut().zip(g.iter().zip(w.iter())).zip(a.iter()) {
                *dst += (gi - radial * wi) * inv * (1.0 - ai * ai);
            }
        } else {
            for (dst, (&gi, &wi)) in dpre_sum.iter_mut().zip(g.iter().zip(w.iter())) {
                *dst += (gi - radial * wi) * inv;
            }
        }
    }
    let scale = 1.0 / (prompt.nrows() as f64 + 1.0);
    let token_grad = task.encoder.t().dot(&dpre_sum) * scale;
    let mut grad = Array2::zeros(prompt.raw_dim());
    for mut row in grad.rows_mut() {
        row.assign(&token_grad);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss}")));
    }
    Ok((loss, grad))
}

/// Predicted class (argmax of cosine score over `classes`) for each sample.
pub fn predict(
    prompt: &PromptParams,
    samples: &[usize],
    classes: &[usize],
    task: &SyntheticTask,
) -> Result<Vec<usize>> {
    let fwd = text_forward(prompt.tokens(), classes, task)?;
    let scores = fwd.text.dot(&task.features.t());
    Ok(samples
        .iter()
        .map(|&s| {
            let col = scores.column(s);
            let mut best = 0;
            for (j, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = j;
                }
            }
            classes[best]
        })
        .collect())
}

/// Fraction of `samples` classified correctly with the softmax restricted to `classes`.
pub fn accuracy(prompt: &PromptParams, samples: &[usize], classes: &[usize], task: &SyntheticTask) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let pred = predict(prompt, samples, classes, task)?;
    let hits = pred.iter().zip(samples).filter(|(p, &s)| **p == task.labels[s]).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Cross-entropy objective of one batch, usable by the optimizers and landscape tools.
#[derive(Debug, Clone, Copy)]
pub struct PromptObjective<'a> {
    pub task: &'a SyntheticTask,
    pub batch: &'a Batch,
}

impl crate::optim::Objective for PromptObjective<'_> {
    fn loss_and_grad(&self, params: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        loss_and_grad(params, self.batch, self.task)
    }
}
