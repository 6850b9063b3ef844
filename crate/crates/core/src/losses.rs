//! Training objectives over batches of embeddings.
//!
//! Every loss returns its value together with the exact gradient with
//! respect to each input embedding (and, for losses with a linear head, the
//! head weights). Inputs are passed as a flat list of embeddings whose
//! layout is documented per loss; gradients come back in the same layout.
//!
//! All softmax and log-sum-exp evaluations subtract the running maximum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{cosine_with_grad, dot, norm, Mat, NumericError};

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = core::result::Result<T, LossError>;

/// Positive temperature dividing similarities inside exponentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(LossError::Config(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(DEFAULT_TAU)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = LossError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Nested cut points `M` (strictly descending) with weights `c_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct MatryoshkaSchedule {
    dims: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl TryFrom<ScheduleRepr> for MatryoshkaSchedule {
    type Error = LossError;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        match r.weights {
            Some(w) => Self::new(r.dims, w),
            None => Self::uniform(r.dims),
        }
    }
}

impl From<MatryoshkaSchedule> for ScheduleRepr {
    fn from(s: MatryoshkaSchedule) -> Self {
        Self { dims: s.dims, weights: Some(s.weights) }
    }
}

impl MatryoshkaSchedule {
    pub fn new(dims: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(LossError::Config(String::from("schedule needs at least one dimension")));
        }
        if dims.len() != weights.len() {
            return Err(LossError::Config(format!("{} dims but {} weights", dims.len(), weights.len())));
        }
        if dims.contains(&0) {
            return Err(LossError::Config(String::from("schedule dimensions must be positive")));
        }
        if dims.windows(2).any(|w| w[0] <= w[1]) {
            return Err(LossError::Config(format!("schedule dims must be strictly descending: {dims:?}")));
        }
        if weights.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(LossError::Config(format!("schedule weights must be positive: {weights:?}")));
        }
        Ok(Self { dims, weights })
    }

    pub fn uniform(dims: Vec<usize>) -> Result<Self> {
        let w = vec![1.0; dims.len()];
        Self::new(dims, w)
    }

    /// `full, full/2, ...` down to `min_dim`, unit weights.
    pub fn halving(full: usize, min_dim: usize) -> Result<Self> {
        let mut dims = Vec::new();
        let mut m = full;
        while m >= min_dim.max(1) {
            dims.push(m);
            if m == 1 {
                break;
            }
            m /= 2;
        }
        Self::uniform(dims)
    }

    /// The degenerate schedule `{full}` with weight 1.
    pub fn full(d: usize) -> Result<Self> {
        Self::uniform(vec![d])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn largest(&self) -> usize {
        self.dims[0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.dims.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn check_fits(&self, d: usize) -> Result<()> {
        if self.largest() > d {
            return Err(LossError::Config(format!("schedule dim {} exceeds embedding width {d}", self.largest())));
        }
        Ok(())
    }
}

/// Linear 3-way classifier weights for [`mrl_classification_loss`].
///
/// With `tied_truncation` the classifier for cut `m` is the leading `m`
/// columns of one shared matrix. Otherwise `weights` stacks one block of
/// width `m` per schedule entry, side by side in schedule order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weights: Mat,
    pub tied_truncation: bool,
}

impl ClassifierHead {
    pub fn tied(weights: Mat) -> Self {
        Self { weights, tied_truncation: true }
    }

    /// Untied head assembled from one matrix per schedule entry.
    pub fn untied(blocks: &[Mat]) -> Result<Self> {
        let rows = blocks.first().map(Mat::rows).unwrap_or(0);
        if blocks.iter().any(|b| b.rows() != rows) {
            return Err(LossError::Config(String::from("untied blocks disagree on class count")));
        }
        let cols: usize = blocks.iter().map(Mat::cols).sum();
        let mut w = Mat::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for r in 0..rows {
                w.row_mut(r)[off..off + b.cols()].copy_from_slice(b.row(r));
            }
            off += b.cols();
        }
        Ok(Self { weights: w, tied_truncation: false })
    }

    /// Column offset of the classifier for each schedule entry.
    fn offsets(&self, sched: &MatryoshkaSchedule) -> Result<Vec<usize>> {
        if self.tied_truncation {
            if self.weights.cols() < sched.largest() {
                return Err(LossError::Config(format!(
                    "tied head has {} columns, schedule needs {}",
                    self.weights.cols(),
                    sched.largest()
                )));
            }
            Ok(vec![0; sched.dims().len()])
        } else {
            let total: usize = sched.dims().iter().sum();
            if self.weights.cols() != total {
                return Err(LossError::Config(format!(
                    "untied head has {} columns, schedule needs {total}",
                    self.weights.cols()
                )));
            }
            let mut off = 0;
            Ok(sched
                .dims()
                .iter()
                .map(|m| {
                    let o = off;
                    off += m;
                    o
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// One gradient per input embedding, in input order.
    pub grads: Vec<Vec<f64>>,
    /// Gradient for the classifier head, when the loss has one.
    pub head_grad: Option<Mat>,
}

impl LossOutput {
    fn finish(self) -> Result<Self> {
        if !self.value.is_finite() {
            return Err(LossError::NonFinite("loss value"));
        }
        if self.grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(LossError::NonFinite("embedding gradient"));
        }
        if self.head_grad.as_ref().is_some_and(|h| !h.is_finite()) {
            return Err(LossError::NonFinite("head gradient"));
        }
        Ok(self)
    }
}

/// A loss over a flat list of embeddings.
pub trait EmbeddingLoss {
    fn eval(&self, inputs: &[Vec<f64>]) -> Result<LossOutput>;
}

impl<F> EmbeddingLoss for F
where
    F: Fn(&[Vec<f64>]) -> Result<LossOutput>,
{
    fn eval(&self, inputs: &[Vec<f64>]) -> Result<LossOutput> {
        self(inputs)
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for x in xs {
        s += libm::exp(x - m);
    }
    m + libm::log(s)
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| libm::exp(x - lse)).collect()
}

fn check_width(inputs: &[Vec<f64>]) -> Result<usize> {
    let d = inputs.first().map(Vec::len).ok_or_else(|| LossError::Config(String::from("empty batch")))?;
    if d == 0 {
        return Err(LossError::Config(String::from("zero-width embeddings")));
    }
    if let Some(bad) = inputs.iter().find(|v| v.len() != d) {
        return Err(LossError::Config(format!("embedding widths differ: {d} vs {}", bad.len())));
    }
    Ok(d)
}

fn add_scaled(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

// ---------------------------------------------------------------------------
// InfoNCE with in-batch and explicit negatives
// ---------------------------------------------------------------------------

/// Multiple-negatives ranking loss.
///
/// Layout: `n` anchors, `n` positives, then optionally `n` explicit
/// negatives. Anchor `i` is scored against every positive and negative with
/// `scale · cos`, and its own positive is the target class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNce {
    pub scale: f64,
    pub batch: usize,
}

impl EmbeddingLoss for InfoNce {
    fn eval(&self, inputs: &[Vec<f64>]) -> Result<LossOutput> {
        let n = self.batch;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(LossError::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if n == 0 {
            return Err(LossError::Config(String::from("empty batch")));
        }
        let has_neg = match inputs.len() {
            l if l == 2 * n => false,
            l if l == 3 * n => true,
            l => {
                return Err(LossError::Config(format!("expected {} or {} embeddings, got {l}", 2 * n, 3 * n)));
            }
        };
        if n < 2 && !has_neg {
            return Err(LossError::Config(String::from(
                "a single pair without explicit negatives has no contrastive signal",
            )));
        }
        check_width(inputs)?;

        let norms: Vec<f64> = inputs.iter().map(|v| norm(v)).collect();
        if let Some(i) = norms.iter().position(|x| *x == 0.0) {
            return Err(LossError::Contract(format!("embedding {i} has zero norm")));
        }
        let unit: Vec<Vec<f64>> = inputs.iter().zip(&norms).map(|(v, nv)| v.iter().map(|x| x / nv).collect()).collect();
        let cand: Vec<usize> = (n..inputs.len()).collect();

        let mut grads: Vec<Vec<f64>> = inputs.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut value = 0.0;
        let inv_n = 1.0 / n as f64;
        let mut scores = vec![0.0; cand.len()];
        for i in 0..n {
            let mut cosines = vec![0.0; cand.len()];
            for (j, &c) in cand.iter().enumerate() {
                cosines[j] = dot(&unit[i], &unit[c]);
                scores[j] = self.scale * cosines[j];
            }
            let lse = logsumexp(&scores);
            value += (lse - scores[i]) * inv_n;
            for (j, &c) in cand.iter().enumerate() {
                let p = libm::exp(scores[j] - lse);
                let w = (p - if j == i { 1.0 } else { 0.0 }) * self.scale * inv_n;
                if w == 0.0 {
                    continue;
                }
                // d cos / d a = (ĉ - cos â) / |a|
                let cs = cosines[j];
                let (ga, gc) = {
                    let (lo, hi) = grads.split_at_mut(c);
                    (&mut lo[i], &mut hi[0])
                };
                for k in 0..ga.len() {
                    ga[k] += w * (unit[c][k] - cs * unit[i][k]) / norms[i];
                    gc[k] += w * (unit[i][k] - cs * unit[c][k]) / norms[c];
                }
            }
        }
        LossOutput { value, grads, head_grad: None }.finish()
    }
}

/// InfoNCE over a triplet batch; pass an empty `negatives` to rely on
/// in-batch negatives only. Gradients: anchors, positives, negatives.
pub fn infonce_triplet(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    scale: f64,
) -> Result<LossOutput> {
    let n = anchors.len();
    if positives.len() != n || !(negatives.is_empty() || negatives.len() == n) {
        return Err(LossError::Config(format!(
            "batch sizes differ: {n} anchors, {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let flat: Vec<Vec<f64>> = anchors.iter().chain(positives).chain(negatives).cloned().collect();
    InfoNce { scale, batch: n }.eval(&flat)
}

// ---------------------------------------------------------------------------
// Nested-dimension wrapper
// ---------------------------------------------------------------------------

/// Leading `m` coordinates of `z`, optionally rescaled to unit length.
pub fn truncate(z: &[f64], m: usize, renormalize: bool) -> Result<Vec<f64>> {
    if m == 0 || m > z.len() {
        return Err(LossError::Config(format!("cannot truncate width {} to {m}", z.len())));
    }
    let t = &z[..m];
    if !renormalize {
        return Ok(t.to_vec());
    }
    let n = norm(t);
    if n == 0.0 {
        return Err(LossError::Contract(format!("truncation to {m} dims has zero norm")));
    }
    Ok(t.iter().map(|x| x / n).collect())
}

/// `Σ_m c_m · base(truncate_m(inputs))`. Gradients of each truncated view
/// (pulled back through the renormalization when enabled) are scatter-added
/// into the leading `m` coordinates. Terms are reduced in schedule order.
pub fn matryoshka_wrap<L: EmbeddingLoss + ?Sized>(
    base: &L,
    inputs: &[Vec<f64>],
    sched: &MatryoshkaSchedule,
    renormalize: bool,
) -> Result<LossOutput> {
    let d = check_width(inputs)?;
    sched.check_fits(d)?;
    let mut grads: Vec<Vec<f64>> = inputs.iter().map(|_| vec![0.0; d]).collect();
    let mut head_grad: Option<Mat> = None;
    let mut value = 0.0;
    for (m, c) in sched.iter() {
        let views: Vec<Vec<f64>> = inputs.iter().map(|z| truncate(z, m, renormalize)).collect::<Result<_>>()?;
        let out = base.eval(&views)?;
        if out.grads.len() != inputs.len() {
            return Err(LossError::Contract(String::from("base loss returned misaligned gradients")));
        }
        value += c * out.value;
        for ((g, view), (z, acc)) in out.grads.iter().zip(&views).zip(inputs.iter().zip(grads.iter_mut())) {
            if renormalize {
                // d t̂/d t applied to g: (g - t̂ (t̂·g)) / |t|
                let n = norm(&z[..m]);
                let tg = dot(view, g);
                for k in 0..m {
                    acc[k] += c * (g[k] - view[k] * tg) / n;
                }
            } else {
                add_scaled(&mut acc[..m], g, c);
            }
        }
        if let Some(hg) = out.head_grad {
            match head_grad.as_mut() {
                Some(acc) => add_scaled(acc.as_mut_slice(), hg.as_slice(), c),
                None => {
                    let mut first = Mat::zeros(hg.rows(), hg.cols());
                    add_scaled(first.as_mut_slice(), hg.as_slice(), c);
                    head_grad = Some(first);
                }
            }
        }
    }
    LossOutput { value, grads, head_grad }.finish()
}

// ---------------------------------------------------------------------------
// Classification losses
// ---------------------------------------------------------------------------

fn check_labels(labels: &[usize], classes: usize, n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(LossError::Config(format!("{n} examples but {} labels", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| **l >= classes) {
        return Err(LossError::Config(format!("label {l} outside 0..{classes}")));
    }
    Ok(())
}

/// Adds `coef · mean_i CE(W[:, off..off+m] z_i[..m], y_i)` to the
/// accumulators and returns the unweighted mean.
fn linear_ce_block(
    z: &[Vec<f64>],
    labels: &[usize],
    w: &Mat,
    off: usize,
    m: usize,
    coef: f64,
    grads: &mut [Vec<f64>],
    head_grad: &mut Mat,
) -> f64 {
    let inv_n = 1.0 / z.len() as f64;
    let mut total = 0.0;
    for (i, zi) in z.iter().enumerate() {
        let x = &zi[..m];
        let logits = w.block_matvec(off, x);
        let lse = logsumexp(&logits);
        total += (lse - logits[labels[i]]) * inv_n;
        for (r, l) in logits.iter().enumerate() {
            let delta = (libm::exp(l - lse) - if r == labels[i] { 1.0 } else { 0.0 }) * coef * inv_n;
            if delta == 0.0 {
                continue;
            }
            let wrow = &w.row(r)[off..off + m];
            add_scaled(&mut grads[i][..m], wrow, delta);
            add_scaled(&mut head_grad.row_mut(r)[off..off + m], x, delta);
        }
    }
    total
}

/// Softmax cross-entropy of a bias-free linear classifier on full
/// embeddings: `mean_i CE(W z_i, y_i)`.
pub fn linear_cross_entropy(z: &[Vec<f64>], labels: &[usize], weights: &Mat) -> Result<LossOutput> {
    let d = check_width(z)?;
    if weights.cols() != d {
        return Err(LossError::Config(format!("classifier expects width {}, got {d}", weights.cols())));
    }
    check_labels(labels, weights.rows(), z.len())?;
    let mut grads: Vec<Vec<f64>> = z.iter().map(|_| vec![0.0; d]).collect();
    let mut hg = Mat::zeros(weights.rows(), weights.cols());
    let value = linear_ce_block(z, labels, weights, 0, d, 1.0, &mut grads, &mut hg);
    LossOutput { value, grads, head_grad: Some(hg) }.finish()
}

/// Nested classification objective: `Σ_m c_m · mean_i CE(W⁽ᵐ⁾ z_i[..m], y_i)`
/// with `W⁽ᵐ⁾` taken from `head` (tied prefix or per-dim block).
pub fn mrl_classification_loss(
    z: &[Vec<f64>],
    labels: &[usize],
    head: &ClassifierHead,
    sched: &MatryoshkaSchedule,
) -> Result<LossOutput> {
    let d = check_width(z)?;
    sched.check_fits(d)?;
    check_labels(labels, head.weights.rows(), z.len())?;
    let offsets = head.offsets(sched)?;
    let mut grads: Vec<Vec<f64>> = z.iter().map(|_| vec![0.0; d]).collect();
    let mut hg = Mat::zeros(head.weights.rows(), head.weights.cols());
    let mut value = 0.0;
    for ((m, c), off) in sched.iter().zip(offsets) {
        value += c * linear_ce_block(z, labels, &head.weights, off, m, c, &mut grads, &mut hg);
    }
    LossOutput { value, grads, head_grad: Some(hg) }.finish()
}

/// Contrastive classification with label-based negatives.
///
/// Layout: `n` premises, then for each example its `k` hypotheses in label
/// order. With `s = cos`, the loss is
/// `-mean_i log softmax(s(x_i, h_i·) / τ)[y_i]`: the hypothesis carrying the
/// target label is the positive and the others are negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelNegative {
    pub tau: Temperature,
    pub targets: Vec<usize>,
    pub per_example: usize,
}

impl EmbeddingLoss for LabelNegative {
    fn eval(&self, inputs: &[Vec<f64>]) -> Result<LossOutput> {
        let n = self.targets.len();
        let k = self.per_example;
        if n == 0 {
            return Err(LossError::Config(String::from("empty batch")));
        }
        if k < 2 {
            return Err(LossError::Contract(String::from("missing negative set: need at least 2 hypotheses per premise")));
        }
        if inputs.len() != n * (1 + k) {
            return Err(LossError::Contract(format!("expected {} embeddings, got {}", n * (1 + k), inputs.len())));
        }
        check_labels(&self.targets, k, n)?;
        check_width(inputs)?;
        let tau = self.tau.get();
        let mut grads: Vec<Vec<f64>> = inputs.iter().map(|v| vec![0.0; v.len()]).collect();
        let mut value = 0.0;
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            let mut cos_grads = Vec::with_capacity(k);
            let mut logits = Vec::with_capacity(k);
            for l in 0..k {
                let (c, gx, gh) = cosine_with_grad(&inputs[i], &inputs[n + i * k + l])?;
                logits.push(c / tau);
                cos_grads.push((gx, gh));
            }
            let p = softmax(&logits);
            value += (logsumexp(&logits) - logits[self.targets[i]]) * inv_n;
            for (l, (gx, gh)) in cos_grads.iter().enumerate() {
                let w = (p[l] - if l == self.targets[i] { 1.0 } else { 0.0 }) * inv_n / tau;
                add_scaled(&mut grads[i], gx, w);
                add_scaled(&mut grads[n + i * k + l], gh, w);
            }
        }
        LossOutput { value, grads, head_grad: None }.finish()
    }
}

/// Label-negative classification loss. `hyps_by_label[i][l]` is the
/// hypothesis paired with premise `i` under label `l`; `true_label[i]` picks
/// the positive. Gradients: premises, then hypotheses row by row.
pub fn label_negative_cls_loss(
    premises: &[Vec<f64>],
    hyps_by_label: &[Vec<Vec<f64>>],
    true_label: &[usize],
    tau: Temperature,
) -> Result<LossOutput> {
    let n = premises.len();
    if hyps_by_label.len() != n {
        return Err(LossError::Contract(format!("{n} premises but {} hypothesis sets", hyps_by_label.len())));
    }
    let k = hyps_by_label.first().map(Vec::len).unwrap_or(0);
    if hyps_by_label.iter().any(|h| h.len() != k) || k < 2 {
        return Err(LossError::Contract(String::from(
            "missing negative set: every premise needs the same number (>= 2) of hypotheses",
        )));
    }
    let flat: Vec<Vec<f64>> = premises.iter().chain(hyps_by_label.iter().flatten()).cloned().collect();
    LabelNegative { tau, targets: true_label.to_vec(), per_example: k }.eval(&flat)
}

/// Pair classifier over `(u, v, |u - v|)` with a bias-free 3 × 3d head.
///
/// Layout: `n` first embeddings then `n` second embeddings. The subgradient
/// of `|u - v|` is taken as 0 at exact ties.
pub fn softmax_head_cls_loss(u: &[Vec<f64>], v: &[Vec<f64>], labels: &[usize], head: &Mat) -> Result<LossOutput> {
    let n = u.len();
    if v.len() != n || n == 0 {
        return Err(LossError::Config(format!("pair batch sizes {n} and {} must match and be nonzero", v.len())));
    }
    let d = u[0].len();
    if u.iter().chain(v).any(|x| x.len() != d) || d == 0 {
        return Err(LossError::Config(String::from("embedding widths differ")));
    }
    if head.cols() != 3 * d {
        return Err(LossError::Config(format!("head expects {} features, pair gives {}", head.cols(), 3 * d)));
    }
    check_labels(labels, head.rows(), n)?;
    let inv_n = 1.0 / n as f64;
    let mut gu: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
    let mut gv: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
    let mut hg = Mat::zeros(head.rows(), head.cols());
    let mut value = 0.0;
    for i in 0..n {
        let f = pair_features(&u[i], &v[i]);
        let logits: Vec<f64> = (0..head.rows()).map(|r| dot(head.row(r), &f)).collect();
        let lse = logsumexp(&logits);
        value += (lse - logits[labels[i]]) * inv_n;
        let mut df = vec![0.0; 3 * d];
        for (r, l) in logits.iter().enumerate() {
            let delta = (libm::exp(l - lse) - if r == labels[i] { 1.0 } else { 0.0 }) * inv_n;
            add_scaled(hg.row_mut(r), &f, delta);
            add_scaled(&mut df, head.row(r), delta);
        }
        for k in 0..d {
            let diff = u[i][k] - v[i][k];
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            gu[i][k] = df[k] + sign * df[2 * d + k];
            gv[i][k] = df[d + k] - sign * df[2 * d + k];
        }
    }
    gu.extend(gv);
    LossOutput { value, grads: gu, head_grad: Some(hg) }.finish()
}

/// `concat(u, v, |u - v|)`.
pub fn pair_features(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(3 * u.len());
    f.extend_from_slice(u);
    f.extend_from_slice(v);
    f.extend(u.iter().zip(v).map(|(a, b)| (a - b).abs()));
    f
}

/// Class predicted by the pair head (first maximum on ties).
pub fn predict_pair_label(u: &[f64], v: &[f64], head: &Mat) -> usize {
    let f = pair_features(u, v);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for r in 0..head.rows() {
        let s = dot(head.row(r), &f);
        if s > best_score {
            best = r;
            best_score = s;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// CoSENT
// ---------------------------------------------------------------------------

/// CoSENT ranking loss over scored pairs.
///
/// Layout: `n` first texts then `n` second texts.
/// `log(1 + Σ_{gold_a > gold_b} exp((cos_b - cos_a) / τ))`, evaluated as a
/// log-sum-exp over the violation terms joined with an implicit 0. Equal gold
/// scores contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct CoSent {
    pub tau: Temperature,
    pub gold: Vec<f64>,
}

impl EmbeddingLoss for CoSent {
    fn eval(&self, inputs: &[Vec<f64>]) -> Result<LossOutput> {
        let n = self.gold.len();
        if n == 0 {
            return Err(LossError::Config(String::from("empty batch")));
        }
        if inputs.len() != 2 * n {
            return Err(LossError::Config(format!("expected {} embeddings, got {}", 2 * n, inputs.len())));
        }
        if self.gold.iter().any(|g| !g.is_finite()) {
            return Err(LossError::NonFinite("gold score"));
        }
        check_width(inputs)?;
        let tau = self.tau.get();
        let mut cos = Vec::with_capacity(n);
        let mut cgrads = Vec::with_capacity(n);
        for i in 0..n {
            let (c, ga, gb) = cosine_with_grad(&inputs[i], &inputs[n + i])?;
            cos.push(c);
            cgrads.push((ga, gb));
        }
        // terms[0] is the implicit zero
        let mut terms = vec![0.0];
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if self.gold[a] > self.gold[b] {
                    terms.push((cos[b] - cos[a]) / tau);
                    pairs.push((a, b));
                }
            }
        }
        let lse = logsumexp(&terms);
        let mut dcos = vec![0.0; n];
        for (t, &(a, b)) in terms[1..].iter().zip(&pairs) {
            let w = libm::exp(t - lse) / tau;
            dcos[b] += w;
            dcos[a] -= w;
        }
        let mut grads: Vec<Vec<f64>> = inputs.iter().map(|v| vec![0.0; v.len()]).collect();
        for i in 0..n {
            if dcos[i] != 0.0 {
                add_scaled(&mut grads[i], &cgrads[i].0, dcos[i]);
                add_scaled(&mut grads[n + i], &cgrads[i].1, dcos[i]);
            }
        }
        LossOutput { value: lse, grads, head_grad: None }.finish()
    }
}

/// CoSENT over `(a_i, b_i)` pairs with gold similarities `gold_i`.
pub fn cosent_loss(a: &[Vec<f64>], b: &[Vec<f64>], gold: &[f64], tau: Temperature) -> Result<LossOutput> {
    if a.len() != b.len() || a.len() != gold.len() {
        return Err(LossError::Config(format!(
            "pair sides {} / {} and {} gold scores must match",
            a.len(),
            b.len(),
            gold.len()
        )));
    }
    let flat: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    CoSent { tau, gold: gold.to_vec() }.eval(&flat)
}

// ---------------------------------------------------------------------------
// Per-task dispatch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Classification,
    Sts,
    /// Contrastive triplet batches of the single-task regime.
    Triplet,
}

impl TaskTag {
    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Classification => "classification",
            TaskTag::Sts => "sts",
            TaskTag::Triplet => "triplet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(TaskTag::Classification),
            "sts" => Ok(TaskTag::Sts),
            "triplet" => Ok(TaskTag::Triplet),
            other => Err(LossError::Contract(format!("unknown task tag '{other}'"))),
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which classification objective hybrid training routes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassificationForm {
    /// [`softmax_head_cls_loss`]
    #[default]
    SoftmaxHead,
    /// [`label_negative_cls_loss`]
    LabelNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassificationBatch {
    Pairs { premises: Vec<Vec<f64>>, hypotheses: Vec<Vec<f64>>, labels: Vec<usize> },
    LabelSets { premises: Vec<Vec<f64>>, hypotheses_by_label: Vec<Vec<Vec<f64>>>, true_labels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskBatch {
    Classification(ClassificationBatch),
    Sts { a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, gold: Vec<f64> },
}

impl TaskBatch {
    pub fn tag(&self) -> TaskTag {
        match self {
            TaskBatch::Classification(_) => TaskTag::Classification,
            TaskBatch::Sts { .. } => TaskTag::Sts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub form: ClassificationForm,
    pub tau_cls: Temperature,
    pub tau_sts: Temperature,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self { form: ClassificationForm::default(), tau_cls: Temperature::default(), tau_sts: Temperature::default() }
    }
}

/// Routes a tagged batch to its task loss and returns that loss unchanged:
/// classification batches go to the configured classification objective and
/// STS batches to [`cosent_loss`].
pub fn hybrid_dispatch(batch: &TaskBatch, cfg: &HybridConfig, head: Option<&Mat>) -> Result<LossOutput> {
    match batch {
        TaskBatch::Sts { a, b, gold } => cosent_loss(a, b, gold, cfg.tau_sts),
        TaskBatch::Classification(cls) => match (cfg.form, cls) {
            (ClassificationForm::SoftmaxHead, ClassificationBatch::Pairs { premises, hypotheses, labels }) => {
                let head = head.ok_or_else(|| LossError::Contract(String::from("softmax head form needs a head")))?;
                softmax_head_cls_loss(premises, hypotheses, labels, head)
            }
            (
                ClassificationForm::LabelNegative,
                ClassificationBatch::LabelSets { premises, hypotheses_by_label, true_labels },
            ) => label_negative_cls_loss(premises, hypotheses_by_label, true_labels, cfg.tau_cls),
            (form, _) => Err(LossError::Contract(format!("batch shape does not fit classification form {form:?}"))),
        },
    }
}

/// Loss settings carried in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// InfoNCE logit scale.
    pub scale: f64,
    pub tau_sts: Temperature,
    pub tau_cls: Temperature,
    /// Wrap the triplet loss in the nested-dimension objective.
    pub matryoshka: bool,
    pub schedule: Option<MatryoshkaSchedule>,
    /// Re-normalize truncated views before cosine-based losses.
    pub renormalize: bool,
    pub classification: ClassificationForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            tau_sts: Temperature::default(),
            tau_cls: Temperature::default(),
            matryoshka: true,
            schedule: None,
            renormalize: true,
            classification: ClassificationForm::default(),
        }
    }
}

impl LossConfig {
    pub fn hybrid(&self) -> HybridConfig {
        HybridConfig { form: self.classification, tau_cls: self.tau_cls, tau_sts: self.tau_sts }
    }

    /// Configured schedule, or halving from `d_full` down to `d_full / 8`.
    pub fn schedule_for(&self, d_full: usize) -> Result<MatryoshkaSchedule> {
        match &self.schedule {
            Some(s) => {
                s.check_fits(d_full)?;
                Ok(s.clone())
            }
            None => MatryoshkaSchedule::halving(d_full, (d_full / 8).max(1)),
        }
    }
}
