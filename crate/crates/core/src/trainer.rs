//! Optimization loop: Adam, linear warmup with linear decay, and the two
//! training regimes (nested-dimension triplet training and round-robin
//! hybrid classification + STS training).
//!
//! Batch order is a pure function of `(seed, epoch)`, so a run can be
//! resumed from any checkpoint by skipping the batches already consumed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    derive_seed, epoch_permutation, num_batches, BatchRecord, DataError, LabeledPair, ScoredPair, TripletExample,
    NUM_LABELS,
};
use crate::encoder::{backward_into, encode_ids, Encoder, EncoderError, EncoderGrads, ForwardTrace, DEFAULT_MAX_LEN};
use crate::eval::{classification_accuracy, eval_sts, EvalError, EvalMeta, EvalReport, Headline};
use crate::losses::{
    hybrid_dispatch, matryoshka_wrap, ClassificationBatch, ClassificationForm, EmbeddingLoss, InfoNce, LossConfig,
    LossError, LossOutput, TaskBatch, TaskTag,
};
use crate::numerics::{Mat, SimilarityKind};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter group '{group}' at step {step}")]
    NonFiniteGradient { step: u64, group: String },
    #[error("{task} loss failed at step {step}: {source}")]
    Loss { step: u64, task: TaskTag, source: LossError },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("observer failed: {0}")]
    Observer(String),
}

pub type Result<T> = core::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    MatryoshkaTriplet,
    HybridMultitask,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::MatryoshkaTriplet => "matryoshka-triplet",
            Regime::HybridMultitask => "hybrid-multitask",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Regime::MatryoshkaTriplet, Regime::HybridMultitask].into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    /// 0 disables periodic evaluation; the final step is always evaluated.
    pub eval_every: usize,
    /// 0 disables periodic checkpoints; the final step is always saved.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Global L2 clipping threshold; `None` leaves gradients untouched.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_regime(Regime::HybridMultitask)
    }
}

impl TrainConfig {
    pub fn for_regime(regime: Regime) -> Self {
        let batch_size = match regime {
            Regime::MatryoshkaTriplet => 128,
            Regime::HybridMultitask => 64,
        };
        Self {
            epochs: 5,
            batch_size,
            learning_rate: 2e-5,
            warmup_ratio: 0.1,
            eval_every: 200,
            checkpoint_every: 200,
            seed: 0,
            regime,
            max_grad_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config(String::from("epochs must be at least 1")));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config(String::from("batch_size must be at least 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(TrainError::Config(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio)));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::Config(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub out_dim: usize,
    pub max_len: usize,
    pub normalize_output: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: 64, out_dim: 64, max_len: DEFAULT_MAX_LEN, normalize_output: true }
    }
}

/// Everything a run needs besides data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

/// Learning rate used for the update that starts at `step`: linear ramp
/// from 0 over `ceil(warmup_ratio · total)` steps, then linear decay to 0
/// at `total`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let warm = libm::ceil(cfg.warmup_ratio * total_steps as f64) as usize;
    if step < warm {
        cfg.learning_rate * step as f64 / warm as f64
    } else {
        cfg.learning_rate * (total_steps - step) as f64 / (total_steps - warm) as f64
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Updates applied so far.
    pub step: u64,
    pub groups: Vec<MomentState>,
}

/// One named parameter tensor with its gradient.
pub struct ParamGroup<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

impl OptimizerState {
    pub fn for_groups(groups: &[(&str, usize)]) -> Self {
        Self {
            step: 0,
            groups: groups
                .iter()
                .map(|(name, len)| MomentState { name: String::from(*name), m: vec![0.0; *len], v: vec![0.0; *len] })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.m.iter().chain(&g.v).all(|x| x.is_finite()))
    }
}

/// One bias-corrected Adam update over all groups. Gradients are checked
/// before any parameter or moment is touched.
pub fn adam_step(groups: &mut [ParamGroup<'_>], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TrainError::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    if groups.len() != state.groups.len() {
        return Err(TrainError::Config(format!(
            "{} parameter groups but optimizer tracks {}",
            groups.len(),
            state.groups.len()
        )));
    }
    let next = state.step + 1;
    for (g, s) in groups.iter().zip(&state.groups) {
        if g.name != s.name || g.values.len() != s.m.len() || g.grads.len() != s.m.len() {
            return Err(TrainError::Config(format!("parameter group '{}' does not match optimizer state", g.name)));
        }
        if g.grads.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { step: next, group: String::from(g.name) });
        }
    }
    state.step = next;
    let bc1 = 1.0 - libm::pow(ADAM_BETA1, next as f64);
    let bc2 = 1.0 - libm::pow(ADAM_BETA2, next as f64);
    for (g, s) in groups.iter_mut().zip(state.groups.iter_mut()) {
        for i in 0..g.values.len() {
            let gr = g.grads[i];
            s.m[i] = ADAM_BETA1 * s.m[i] + (1.0 - ADAM_BETA1) * gr;
            s.v[i] = ADAM_BETA2 * s.v[i] + (1.0 - ADAM_BETA2) * gr * gr;
            let mh = s.m[i] / bc1;
            let vh = s.v[i] / bc2;
            g.values[i] -= lr * mh / (libm::sqrt(vh) + ADAM_EPS);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training state and logs
// ---------------------------------------------------------------------------

pub const GROUP_EMBED: &str = "embed_table";
pub const GROUP_PROJ: &str = "proj";
pub const GROUP_BIAS: &str = "proj_bias";
pub const GROUP_HEAD: &str = "head";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoder: Encoder,
    /// Pair classifier over `(u, v, |u - v|)` for the hybrid regime.
    pub head: Option<Mat>,
    pub optimizer: OptimizerState,
}

impl TrainState {
    /// Fresh state; a seeded pair head is created when the run needs one.
    pub fn new(encoder: Encoder, run: &RunConfig) -> Self {
        let needs_head = run.train.regime == Regime::HybridMultitask
            && run.loss.classification == ClassificationForm::SoftmaxHead;
        let head = needs_head.then(|| init_pair_head(encoder.out_dim(), derive_seed(run.train.seed, STREAM_HEAD)));
        let mut sizes = vec![
            (GROUP_EMBED, encoder.params.embed_table.as_slice().len()),
            (GROUP_PROJ, encoder.params.proj.as_slice().len()),
            (GROUP_BIAS, encoder.params.proj_bias.len()),
        ];
        if let Some(h) = &head {
            sizes.push((GROUP_HEAD, h.as_slice().len()));
        }
        let optimizer = OptimizerState::for_groups(&sizes);
        Self { encoder, head, optimizer }
    }

    /// Completed optimizer updates.
    pub fn step(&self) -> usize {
        self.optimizer.step as usize
    }
}

/// `NUM_LABELS × 3d` head with entries uniform in `±1/sqrt(3d)`.
pub fn init_pair_head(out_dim: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / libm::sqrt((3 * out_dim) as f64);
    Mat::from_fn(NUM_LABELS, 3 * out_dim, |_, _| rng.gen_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based count of updates applied, including this one.
    pub step: usize,
    pub epoch: usize,
    pub task: TaskTag,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub report: EvalReport,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Side-effect hooks; the std crate uses them to write logs and
/// checkpoints as training proceeds.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> core::result::Result<(), String> {
        Ok(())
    }
    fn on_eval(&mut self, _record: &EvalRecord) -> core::result::Result<(), String> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _state: &TrainState) -> core::result::Result<(), String> {
        Ok(())
    }
}

impl TrainObserver for () {}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

/// One premise with a hypothesis for every label, target entailment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub premise: String,
    /// Hypotheses in label-code order.
    pub hypotheses: Vec<String>,
    pub target: usize,
}

impl BatchRecord for LabelSet {}

/// Groups labeled pairs by premise (first hypothesis per label wins) and
/// keeps premises that have all labels, ordered by premise text.
pub fn group_label_sets(pairs: &[LabeledPair]) -> Vec<LabelSet> {
    let mut by_premise: BTreeMap<&str, [Option<&str>; NUM_LABELS]> = BTreeMap::new();
    for p in pairs {
        let slot = &mut by_premise.entry(p.premise.as_str()).or_default()[p.label.code()];
        if slot.is_none() {
            *slot = Some(p.hypothesis.as_str());
        }
    }
    by_premise
        .into_iter()
        .filter_map(|(premise, hyps)| {
            let hypotheses = hyps.iter().map(|h| h.map(String::from)).collect::<Option<Vec<_>>>()?;
            Some(LabelSet { premise: String::from(premise), hypotheses, target: 0 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Triplets(&'a [TripletExample]),
    Hybrid { labeled: &'a [LabeledPair], scored: &'a [ScoredPair] },
}

/// Held-out evaluation run at eval steps.
#[derive(Debug, Clone)]
pub struct EvalPlan<'a> {
    pub dataset: String,
    pub pairs: &'a [ScoredPair],
    pub dims: Vec<usize>,
    pub kinds: Vec<SimilarityKind>,
    pub renormalize: bool,
    /// Scored for accuracy when the state has a pair head.
    pub labeled: Option<&'a [LabeledPair]>,
}

impl EvalPlan<'_> {
    pub fn run(&self, state: &TrainState, checkpoint: &str) -> Result<(EvalReport, Option<f64>)> {
        let meta = EvalMeta {
            dataset: self.dataset.clone(),
            checkpoint: String::from(checkpoint),
            renormalize: self.renormalize,
            headline: Headline::default(),
        };
        let report = eval_sts(&state.encoder, self.pairs, &self.dims, &self.kinds, meta)?;
        let accuracy = match (&state.head, self.labeled) {
            (Some(h), Some(l)) => Some(classification_accuracy(&state.encoder, h, l)?),
            _ => None,
        };
        Ok((report, accuracy))
    }
}

/// Checkpoint identifier used in eval metadata for a given step.
pub fn checkpoint_id(step: usize) -> String {
    format!("step-{step}")
}

/// Stream ids passed to [`derive_seed`] for the hybrid shuffles and head init.
pub const STREAM_CLS: u64 = 1;
pub const STREAM_STS: u64 = 2;
pub const STREAM_HEAD: u64 = 3;

enum Streams<'a> {
    Triplets(&'a [TripletExample]),
    SoftmaxHead { labeled: &'a [LabeledPair], scored: &'a [ScoredPair] },
    LabelNegative { sets: Vec<LabelSet>, scored: &'a [ScoredPair] },
}

#[derive(Clone, Copy)]
enum Slot {
    Triplet(usize),
    Cls(usize),
    Sts(usize),
}

impl Streams<'_> {
    fn lens(&self) -> (usize, usize) {
        match self {
            Streams::Triplets(t) => (t.len(), 0),
            Streams::SoftmaxHead { labeled, scored } => (labeled.len(), scored.len()),
            Streams::LabelNegative { sets, scored } => (sets.len(), scored.len()),
        }
    }
}

/// The task slot occupying position `p` of an epoch: strict alternation
/// cls, sts, cls, ... while both streams last, then the remainder.
fn hybrid_slot(p: usize, n_cls: usize, n_sts: usize) -> Slot {
    let both = n_cls.min(n_sts);
    if p < 2 * both {
        if p % 2 == 0 {
            Slot::Cls(p / 2)
        } else {
            Slot::Sts(p / 2)
        }
    } else if n_cls > n_sts {
        Slot::Cls(both + p - 2 * both)
    } else {
        Slot::Sts(both + p - 2 * both)
    }
}

fn batch_indices(order: &[usize], batch_size: usize, index: usize) -> &[usize] {
    let start = index * batch_size;
    &order[start..(start + batch_size).min(order.len())]
}

/// Number of optimizer updates a full run performs.
pub fn total_steps(data: &TrainData<'_>, run: &RunConfig) -> Result<usize> {
    let streams = build_streams(data, run)?;
    let (a, b) = streams.lens();
    let bs = run.train.batch_size;
    Ok(run.train.epochs * (num_batches(a, bs) + num_batches(b, bs)))
}

fn build_streams<'a>(data: &TrainData<'a>, run: &RunConfig) -> Result<Streams<'a>> {
    let streams = match (run.train.regime, data) {
        (Regime::MatryoshkaTriplet, TrainData::Triplets(t)) => {
            if t.is_empty() {
                return Err(TrainError::Config(String::from("empty triplet dataset")));
            }
            if run.train.batch_size < TripletExample::MIN_BATCH && t.len() > 1 {
                return Err(TrainError::Config(format!(
                    "triplet batch size must be at least {}",
                    TripletExample::MIN_BATCH
                )));
            }
            Streams::Triplets(t)
        }
        (Regime::HybridMultitask, TrainData::Hybrid { labeled, scored }) => {
            if labeled.is_empty() {
                return Err(TrainError::Config(String::from("empty labeled-pair dataset")));
            }
            if scored.is_empty() {
                return Err(TrainError::Config(String::from("empty scored-pair dataset")));
            }
            match run.loss.classification {
                ClassificationForm::SoftmaxHead => Streams::SoftmaxHead { labeled, scored },
                ClassificationForm::LabelNegative => {
                    let sets = group_label_sets(labeled);
                    if sets.is_empty() {
                        return Err(TrainError::Config(String::from(
                            "no premise carries a hypothesis for every label",
                        )));
                    }
                    Streams::LabelNegative { sets, scored }
                }
            }
        }
        (regime, _) => {
            return Err(TrainError::Config(format!("datasets do not fit the {regime} regime")));
        }
    };
    Ok(streams)
}

// ---------------------------------------------------------------------------
// The loop
// ---------------------------------------------------------------------------

struct Encoded {
    traces: Vec<ForwardTrace>,
}

impl Encoded {
    fn new(encoder: &Encoder, texts: &[&str]) -> Self {
        Self { traces: texts.iter().map(|t| encode_ids(&encoder.params, &encoder.tokenizer.tokenize(t))).collect() }
    }

    fn outputs(&self, range: core::ops::Range<usize>) -> Vec<Vec<f64>> {
        self.traces[range].iter().map(|t| t.output.clone()).collect()
    }
}

/// Runs (or resumes) training from `state.step()` to the end of the
/// configured epochs.
pub fn train(
    state: &mut TrainState,
    data: &TrainData<'_>,
    run: &RunConfig,
    eval: Option<&EvalPlan<'_>>,
    observer: &mut dyn TrainObserver,
) -> Result<RunLog> {
    let cfg = &run.train;
    cfg.validate()?;
    let streams = build_streams(data, run)?;
    let d = state.encoder.out_dim();
    let schedule = match (cfg.regime, run.loss.matryoshka) {
        (Regime::MatryoshkaTriplet, true) => Some(run.loss.schedule_for(d).map_err(|e| TrainError::Config(format!("{e}")))?),
        _ => None,
    };
    let needs_head = matches!(streams, Streams::SoftmaxHead { .. });
    if needs_head != state.head.is_some() {
        return Err(TrainError::Config(String::from("pair head presence does not match the classification form")));
    }
    if let Some(p) = eval {
        if let Some(m) = p.dims.iter().find(|&&m| m == 0 || m > d) {
            return Err(TrainError::Config(format!("eval dimension {m} outside 1..={d}")));
        }
    }

    let bs = cfg.batch_size;
    let (len_a, len_b) = streams.lens();
    let (nb_a, nb_b) = (num_batches(len_a, bs), num_batches(len_b, bs));
    let per_epoch = nb_a + nb_b;
    let total = cfg.epochs * per_epoch;
    let start = state.step();
    if start > total {
        return Err(TrainError::Config(format!("state is at step {start}, past the run's {total} steps")));
    }
    let mut log = RunLog::default();
    let hybrid_cfg = run.loss.hybrid();

    for epoch in (start / per_epoch)..cfg.epochs {
        let (order_a, order_b) = match &streams {
            Streams::Triplets(_) => (epoch_permutation(len_a, cfg.seed, epoch), Vec::new()),
            _ => (
                epoch_permutation(len_a, derive_seed(cfg.seed, STREAM_CLS), epoch),
                epoch_permutation(len_b, derive_seed(cfg.seed, STREAM_STS), epoch),
            ),
        };
        for p in 0..per_epoch {
            let k = epoch * per_epoch + p;
            if k < start {
                continue;
            }
            let slot = match &streams {
                Streams::Triplets(_) => Slot::Triplet(p),
                _ => hybrid_slot(p, nb_a, nb_b),
            };
            let step_no = k as u64 + 1;
            let (task, out, traces) = match (slot, &streams) {
                (Slot::Triplet(i), Streams::Triplets(t)) => {
                    let idx = batch_indices(&order_a, bs, i);
                    let n = idx.len();
                    let texts: Vec<&str> = idx
                        .iter()
                        .map(|&j| t[j].anchor.as_str())
                        .chain(idx.iter().map(|&j| t[j].positive.as_str()))
                        .chain(idx.iter().map(|&j| t[j].negative.as_str()))
                        .collect();
                    let enc = Encoded::new(&state.encoder, &texts);
                    let flat = enc.outputs(0..texts.len());
                    let base = InfoNce { scale: run.loss.scale, batch: n };
                    let out = match &schedule {
                        Some(s) => matryoshka_wrap(&base, &flat, s, run.loss.renormalize),
                        None => base.eval(&flat),
                    };
                    (TaskTag::Triplet, out, enc)
                }
                (Slot::Cls(i), Streams::SoftmaxHead { labeled, .. }) => {
                    let idx = batch_indices(&order_a, bs, i);
                    let texts: Vec<&str> = idx
                        .iter()
                        .map(|&j| labeled[j].premise.as_str())
                        .chain(idx.iter().map(|&j| labeled[j].hypothesis.as_str()))
                        .collect();
                    let enc = Encoded::new(&state.encoder, &texts);
                    let n = idx.len();
                    let batch = TaskBatch::Classification(ClassificationBatch::Pairs {
                        premises: enc.outputs(0..n),
                        hypotheses: enc.outputs(n..2 * n),
                        labels: idx.iter().map(|&j| labeled[j].label.code()).collect(),
                    });
                    (TaskTag::Classification, hybrid_dispatch(&batch, &hybrid_cfg, state.head.as_ref()), enc)
                }
                (Slot::Cls(i), Streams::LabelNegative { sets, .. }) => {
                    let idx = batch_indices(&order_a, bs, i);
                    let mut texts: Vec<&str> = idx.iter().map(|&j| sets[j].premise.as_str()).collect();
                    for &j in idx {
                        texts.extend(sets[j].hypotheses.iter().map(String::as_str));
                    }
                    let enc = Encoded::new(&state.encoder, &texts);
                    let n = idx.len();
                    let k_hyp = NUM_LABELS;
                    let batch = TaskBatch::Classification(ClassificationBatch::LabelSets {
                        premises: enc.outputs(0..n),
                        hypotheses_by_label: (0..n).map(|i| enc.outputs(n + i * k_hyp..n + (i + 1) * k_hyp)).collect(),
                        true_labels: idx.iter().map(|&j| sets[j].target).collect(),
                    });
                    (TaskTag::Classification, hybrid_dispatch(&batch, &hybrid_cfg, None), enc)
                }
                (Slot::Sts(i), Streams::SoftmaxHead { scored, .. } | Streams::LabelNegative { scored, .. }) => {
                    let idx = batch_indices(&order_b, bs, i);
                    let texts: Vec<&str> = idx
                        .iter()
                        .map(|&j| scored[j].text_a.as_str())
                        .chain(idx.iter().map(|&j| scored[j].text_b.as_str()))
                        .collect();
                    let enc = Encoded::new(&state.encoder, &texts);
                    let n = idx.len();
                    let batch = TaskBatch::Sts {
                        a: enc.outputs(0..n),
                        b: enc.outputs(n..2 * n),
                        gold: idx.iter().map(|&j| scored[j].gold_score).collect(),
                    };
                    (TaskTag::Sts, hybrid_dispatch(&batch, &hybrid_cfg, None), enc)
                }
                _ => unreachable!("slot kinds follow the stream kind"),
            };
            let out = out.map_err(|source| TrainError::Loss { step: step_no, task, source })?;
            let lr = lr_at(k, total, cfg);
            let value = out.value;
            apply_update(state, &traces, out, cfg.max_grad_norm, lr)?;
            let record = StepRecord { step: k + 1, epoch, task, loss: value, lr };
            observer.on_step(&record).map_err(TrainError::Observer)?;
            log.steps.push(record);

            let done = k + 1;
            let is_final = done == total;
            if let Some(plan) = eval {
                if is_final || (cfg.eval_every > 0 && done % cfg.eval_every == 0) {
                    let (report, accuracy) = plan.run(state, &checkpoint_id(done))?;
                    let rec = EvalRecord { step: done, report, accuracy };
                    observer.on_eval(&rec).map_err(TrainError::Observer)?;
                    log.evals.push(rec);
                }
            }
            if is_final || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
                observer.on_checkpoint(state).map_err(TrainError::Observer)?;
            }
        }
    }
    Ok(log)
}

fn apply_update(
    state: &mut TrainState,
    enc: &Encoded,
    LossOutput { grads: emb_grads, head_grad, .. }: LossOutput,
    max_norm: Option<f64>,
    lr: f64,
) -> Result<()> {
    if emb_grads.len() != enc.traces.len() {
        return Err(TrainError::Config(String::from("loss gradients do not line up with the encoded batch")));
    }
    let mut grads = EncoderGrads::zeros_like(&state.encoder.params);
    for (trace, g) in enc.traces.iter().zip(&emb_grads) {
        backward_into(&state.encoder.params, trace, g, &mut grads)?;
    }
    let mut head_grad = match (&state.head, head_grad) {
        (Some(h), None) => Some(Mat::zeros(h.rows(), h.cols())),
        (Some(_), g) => g,
        (None, _) => None,
    };
    if let Some(c) = max_norm {
        let mut sq = 0.0;
        let all = grads
            .embed_table
            .as_slice()
            .iter()
            .chain(grads.proj.as_slice())
            .chain(&grads.proj_bias)
            .chain(head_grad.iter().flat_map(|h| h.as_slice()));
        for g in all {
            sq += g * g;
        }
        let total = libm::sqrt(sq);
        if total > c {
            let s = c / total;
            grads.embed_table.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            grads.proj.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            grads.proj_bias.iter_mut().for_each(|g| *g *= s);
            if let Some(h) = head_grad.as_mut() {
                h.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    let params = &mut state.encoder.params;
    let mut groups = vec![
        ParamGroup { name: GROUP_EMBED, values: params.embed_table.as_mut_slice(), grads: grads.embed_table.as_slice() },
        ParamGroup { name: GROUP_PROJ, values: params.proj.as_mut_slice(), grads: grads.proj.as_slice() },
        ParamGroup { name: GROUP_BIAS, values: &mut params.proj_bias, grads: &grads.proj_bias },
    ];
    if let (Some(h), Some(hg)) = (state.head.as_mut(), head_grad.as_ref()) {
        groups.push(ParamGroup { name: GROUP_HEAD, values: h.as_mut_slice(), grads: hg.as_slice() });
    }
    adam_step(&mut groups, &mut state.optimizer, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ratio: f64) -> TrainConfig {
        TrainConfig { learning_rate: 1.0, warmup_ratio: ratio, ..TrainConfig::default() }
    }

    #[test]
    fn lr_schedule_shape() {
        let c = cfg(0.1);
        assert_eq!(lr_at(0, 100, &c), 0.0);
        assert_eq!(lr_at(10, 100, &c), 1.0);
        assert_eq!(lr_at(5, 100, &c), 0.5);
        assert_eq!(lr_at(55, 100, &c), 0.5);
        assert_eq!(lr_at(100, 100, &c), 0.0);
        // ceil: 0.1 * 15 = 1.5 -> 2 warmup steps
        assert_eq!(lr_at(1, 15, &c), 0.5);
        assert_eq!(lr_at(0, 10, &cfg(0.0)), 1.0);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut x = [0.0];
        let g = [1.0];
        let mut st = OptimizerState::for_groups(&[("x", 1)]);
        adam_step(&mut [ParamGroup { name: "x", values: &mut x, grads: &g }], &mut st, 0.1).unwrap();
        assert!((x[0] + 0.1).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_rejects_non_finite_before_mutating() {
        let mut x = [1.0, 2.0];
        let mut y = [3.0];
        let mut st = OptimizerState::for_groups(&[("x", 2), ("y", 1)]);
        let before = st.clone();
        let err = adam_step(
            &mut [
                ParamGroup { name: "x", values: &mut x, grads: &[0.5, 0.5] },
                ParamGroup { name: "y", values: &mut y, grads: &[f64::NAN] },
            ],
            &mut st,
            0.1,
        )
        .unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient { step: 1, group: "y".into() });
        assert_eq!(x, [1.0, 2.0]);
        assert_eq!(st, before);
    }

    #[test]
    fn round_robin_slots() {
        let tags: Vec<char> = (0..5)
            .map(|p| match hybrid_slot(p, 3, 2) {
                Slot::Cls(_) => 'c',
                Slot::Sts(_) => 's',
                Slot::Triplet(_) => 't',
            })
            .collect();
        assert_eq!(tags, ['c', 's', 'c', 's', 'c']);
    }

    #[test]
    fn label_sets_need_every_label() {
        use crate::data::Label;
        let pairs = [
            LabeledPair::new("p", "e", Label::Entailment).unwrap(),
            LabeledPair::new("p", "n", Label::Neutral).unwrap(),
            LabeledPair::new("p", "c", Label::Contradiction).unwrap(),
            LabeledPair::new("q", "e", Label::Entailment).unwrap(),
        ];
        let sets = group_label_sets(&pairs);
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].hypotheses, ["e", "n", "c"]);
    }
}
