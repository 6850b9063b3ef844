//! Dataset records, ingest statistics, deterministic batching and the
//! synthetic corpus used for desk-scale runs.
//!
//! Three record shapes exist: triplets (anchor, positive, negative) for
//! contrastive training, labeled premise/hypothesis pairs for 3-way NLI
//! classification, and scored pairs with a 0–5 similarity judgment.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Upper end of the ingested similarity scale.
pub const SCORE_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("empty field '{0}'")]
    EmptyField(&'static str),
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("score {0} outside [0, 5]")]
    ScoreOutOfRange(f64),
    #[error("configuration error: {0}")]
    Config(String),
}

fn require_text(field: &'static str, s: &str) -> Result<(), DataError> {
    if s.trim().is_empty() {
        return Err(DataError::EmptyField(field));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletExample {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

impl TripletExample {
    pub fn new(
        anchor: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Result<Self, DataError> {
        let t = Self { anchor: anchor.into(), positive: positive.into(), negative: negative.into() };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        require_text("anchor", &self.anchor)?;
        require_text("positive", &self.positive)?;
        require_text("negative", &self.negative)
    }

    /// Anchor repeated verbatim as positive or negative.
    pub fn has_self_duplicate(&self) -> bool {
        self.anchor == self.positive || self.anchor == self.negative
    }
}

/// NLI label. The integer codes are part of the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment = 0,
    Neutral = 1,
    Contradiction = 2,
}

/// Number of NLI classes.
pub const NUM_LABELS: usize = 3;

impl Label {
    pub const ALL: [Label; NUM_LABELS] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        }
    }

    /// Accepts the label names (case-insensitive) or their integer codes.
    pub fn parse(token: &str) -> Result<Self, DataError> {
        let t = token.trim();
        for l in Self::ALL {
            if t.eq_ignore_ascii_case(l.name()) {
                return Ok(l);
            }
        }
        t.parse::<usize>()
            .ok()
            .and_then(Self::from_code)
            .ok_or_else(|| DataError::UnknownLabel(String::from(t)))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledPair {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
}

impl LabeledPair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>, label: Label) -> Result<Self, DataError> {
        let p = Self { premise: premise.into(), hypothesis: hypothesis.into(), label };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        require_text("premise", &self.premise)?;
        require_text("hypothesis", &self.hypothesis)
    }
}

/// A pair with a gold similarity on the 0–5 scale. Consumers use
/// [`ScoredPair::normalized`], which maps it to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub text_a: String,
    pub text_b: String,
    pub gold_score: f64,
}

impl ScoredPair {
    pub fn new(text_a: impl Into<String>, text_b: impl Into<String>, gold_score: f64) -> Result<Self, DataError> {
        let p = Self { text_a: text_a.into(), text_b: text_b.into(), gold_score };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        require_text("text_a", &self.text_a)?;
        require_text("text_b", &self.text_b)?;
        if !(0.0..=SCORE_MAX).contains(&self.gold_score) {
            return Err(DataError::ScoreOutOfRange(self.gold_score));
        }
        Ok(())
    }

    pub fn normalized(&self) -> f64 {
        self.gold_score / SCORE_MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Triplet,
    LabeledPair,
    ScoredPair,
}

impl Schema {
    pub fn name(self) -> &'static str {
        match self {
            Schema::Triplet => "triplet",
            Schema::LabeledPair => "labeled-pair",
            Schema::ScoredPair => "scored-pair",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Schema::Triplet, Schema::LabeledPair, Schema::ScoredPair]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Summary produced alongside every loaded dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    /// Records identical to an earlier record.
    pub repeated_records: usize,
    /// Records whose texts repeat inside the record (e.g. anchor == positive).
    pub self_duplicates: usize,
    /// Counts per [`Label`] code; all zero for other schemas.
    pub label_histogram: [usize; NUM_LABELS],
}

impl IngestStats {
    pub fn for_triplets(records: &[TripletExample]) -> Self {
        let mut seen = BTreeSet::new();
        let mut s = Self { records: records.len(), ..Self::default() };
        for r in records {
            if !seen.insert(r) {
                s.repeated_records += 1;
            }
            if r.has_self_duplicate() {
                s.self_duplicates += 1;
            }
        }
        s
    }

    pub fn for_labeled(records: &[LabeledPair]) -> Self {
        let mut seen = BTreeSet::new();
        let mut s = Self { records: records.len(), ..Self::default() };
        for r in records {
            if !seen.insert(r) {
                s.repeated_records += 1;
            }
            if r.premise == r.hypothesis {
                s.self_duplicates += 1;
            }
            s.label_histogram[r.label.code()] += 1;
        }
        s
    }

    pub fn for_scored(records: &[ScoredPair]) -> Self {
        let mut seen = BTreeSet::new();
        let mut s = Self { records: records.len(), ..Self::default() };
        for r in records {
            if !seen.insert((r.text_a.as_str(), r.text_b.as_str(), r.gold_score.to_bits())) {
                s.repeated_records += 1;
            }
            if r.text_a == r.text_b {
                s.self_duplicates += 1;
            }
        }
        s
    }
}

/// Smallest batch a record type can be trained on. Contrastive triplets
/// need a second example to supply in-batch negatives.
pub trait BatchRecord {
    const MIN_BATCH: usize = 1;
}

impl BatchRecord for TripletExample {
    const MIN_BATCH: usize = 2;
}
impl BatchRecord for LabeledPair {}
impl BatchRecord for ScoredPair {}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a, T> {
    pub items: Vec<&'a T>,
    pub epoch: usize,
    pub index: usize,
}

/// splitmix64 finalizer; derives independent seeds for separate streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The record order for one epoch: a pure function of `(len, seed, epoch)`.
pub fn epoch_permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

pub fn num_batches(len: usize, batch_size: usize) -> usize {
    len.div_ceil(batch_size)
}

/// Deterministic batch stream over `records`; the trailing partial batch is
/// kept.
pub fn batch_iter<T: BatchRecord>(
    records: &[T],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<BatchIter<'_, T>, DataError> {
    if batch_size < T::MIN_BATCH {
        return Err(DataError::Config(format!(
            "batch size {batch_size} below the minimum of {} for this record type",
            T::MIN_BATCH
        )));
    }
    Ok(BatchIter {
        records,
        order: epoch_permutation(records.len(), seed, epoch),
        batch_size,
        epoch,
        next: 0,
    })
}

pub struct BatchIter<'a, T> {
    records: &'a [T],
    order: Vec<usize>,
    batch_size: usize,
    epoch: usize,
    next: usize,
}

impl<'a, T> Iterator for BatchIter<'a, T> {
    type Item = Batch<'a, T>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.next * self.batch_size;
        if start >= self.order.len() {
            return None;
        }
        let end = (start + self.batch_size).min(self.order.len());
        let items = self.order[start..end].iter().map(|&i| &self.records[i]).collect();
        let b = Batch { items, epoch: self.epoch, index: self.next };
        self.next += 1;
        Some(b)
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// Knobs of the synthetic generator.
///
/// Each text holds `content_tokens` distinct tokens from its class pool plus
/// `filler_tokens` tokens drawn with replacement from a small shared pool.
/// Shared tokens carry no class signal; they keep surface bag-of-words
/// similarity from predicting the gold scores on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub content_tokens: usize,
    pub filler_tokens: usize,
    /// Fraction of the vocabulary reserved for the shared pool.
    pub shared_fraction: f64,
    /// Content tokens a triplet positive keeps from its anchor.
    pub positive_overlap: usize,
}

impl SynthConfig {
    pub fn new(num_classes: usize, per_class: usize, vocab_size: usize, seed: u64) -> Self {
        Self {
            num_classes,
            per_class,
            vocab_size,
            seed,
            content_tokens: 4,
            filler_tokens: 10,
            shared_fraction: 0.05,
            positive_overlap: 3,
        }
    }

    /// `(class_pool, shared_pool)` sizes.
    pub fn pool_sizes(&self) -> (usize, usize) {
        let shared_target = (self.vocab_size as f64 * self.shared_fraction) as usize;
        let per_class = ((self.vocab_size - shared_target.min(self.vocab_size)) / self.num_classes.max(1)).max(1);
        (per_class, self.vocab_size - per_class * self.num_classes)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.vocab_size < self.num_classes {
            return Err(DataError::Config(format!(
                "vocabulary of {} cannot cover {} classes",
                self.vocab_size, self.num_classes
            )));
        }
        if self.per_class == 0 {
            return Err(DataError::Config(String::from("per_class must be at least 1")));
        }
        if self.content_tokens == 0 {
            return Err(DataError::Config(String::from("content_tokens must be at least 1")));
        }
        if self.positive_overlap > self.content_tokens {
            return Err(DataError::Config(format!(
                "positive_overlap {} exceeds content_tokens {}",
                self.positive_overlap, self.content_tokens
            )));
        }
        if !(0.0..1.0).contains(&self.shared_fraction) {
            return Err(DataError::Config(String::from("shared_fraction must lie in [0, 1)")));
        }
        Ok(())
    }
}

pub fn class_token(class: usize, index: usize) -> String {
    format!("c{class}t{index}")
}

pub fn shared_token(index: usize) -> String {
    format!("s{index}")
}

/// Class tag of a class-pool token, `None` for shared tokens.
pub fn token_class(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('c')?;
    let (class, _) = rest.split_once('t')?;
    class.parse().ok()
}

/// Overlap ratio `|A ∩ B| / max(|A|, |B|)` of the class-pool token sets,
/// rounded to the nearest quarter.
pub fn quantized_overlap(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 0.0;
    }
    let ratio = a.intersection(b).count() as f64 / denom as f64;
    libm::round(ratio * 4.0) / 4.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthText {
    pub class: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    /// `num_classes * per_class` texts, grouped by class.
    pub texts: Vec<SynthText>,
    pub triplets: Vec<TripletExample>,
    /// Class of (anchor, positive, negative) for every triplet.
    pub triplet_classes: Vec<(usize, usize, usize)>,
    pub labeled: Vec<LabeledPair>,
    pub scored: Vec<ScoredPair>,
    /// Classes of (text_a, text_b) for every scored pair.
    pub scored_classes: Vec<(usize, usize)>,
    /// Every token the generator can emit, class pools first.
    pub vocabulary: Vec<String>,
}

fn ring_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

struct Generator<'c> {
    cfg: &'c SynthConfig,
    rng: ChaCha8Rng,
    class_pool: usize,
    shared_pool: usize,
}

impl Generator<'_> {
    /// Draw `k` distinct class-pool indices, avoiding `exclude` while possible.
    fn draw_content(&mut self, k: usize, exclude: &[usize]) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.class_pool).filter(|i| !exclude.contains(i)).collect();
        if pool.len() < k {
            // small pools: fall back to sampling with replacement
            return (0..k).map(|_| self.rng.gen_range(0..self.class_pool)).collect();
        }
        let (chosen, _) = pool.partial_shuffle(&mut self.rng, k);
        chosen.to_vec()
    }

    fn render(&mut self, class: usize, content: &[usize]) -> String {
        let mut tokens: Vec<String> = content.iter().map(|&i| class_token(class, i)).collect();
        if self.shared_pool > 0 {
            for _ in 0..self.cfg.filler_tokens {
                tokens.push(shared_token(self.rng.gen_range(0..self.shared_pool)));
            }
        }
        tokens.shuffle(&mut self.rng);
        tokens.join(" ")
    }

    /// `keep` tokens of `content` plus fresh ones from the same pool.
    fn shared_content(&mut self, content: &[usize], keep: usize) -> Vec<usize> {
        let mut kept = content.to_vec();
        kept.shuffle(&mut self.rng);
        kept.truncate(keep);
        let fresh = self.draw_content(content.len() - keep, content);
        kept.extend(fresh);
        kept
    }

    /// A new same-class text sharing `keep` content tokens with `content`.
    fn variant(&mut self, class: usize, content: &[usize], keep: usize) -> String {
        let c = self.shared_content(content, keep);
        self.render(class, &c)
    }

    fn other_class(&mut self, class: usize) -> usize {
        let n = self.cfg.num_classes;
        (class + 1 + self.rng.gen_range(0..n - 1)) % n
    }
}

/// Generate a deterministic corpus.
///
/// - labeled pairs: three per text, every hypothesis freshly generated.
///   Classes sit on a ring. The entailed hypothesis is same-class and keeps
///   `positive_overlap` of the premise's content tokens, the neutral one
///   comes from a ring-adjacent class and the contradicting one from a class
///   at ring distance two or more (any other class when none is that far);
/// - triplets: one per text, `(premise, entailed, contradicting)` from the
///   labeled pairs;
/// - scored pairs: one per text, cycling through overlap levels 0..=4. The
///   second text is freshly generated: from another class for level 0, or
///   from the same class sharing `level` content tokens otherwise. The gold
///   score is the recounted [`quantized_overlap`] times 5.
pub fn synth_corpus(num_classes: usize, per_class: usize, vocab_size: usize, seed: u64) -> Result<SynthCorpus, DataError> {
    synth_corpus_with(SynthConfig::new(num_classes, per_class, vocab_size, seed))
}

pub fn synth_corpus_with(cfg: SynthConfig) -> Result<SynthCorpus, DataError> {
    cfg.validate()?;
    let (class_pool, shared_pool) = cfg.pool_sizes();
    let mut g = Generator { cfg: &cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed), class_pool, shared_pool };
    let n = cfg.num_classes;
    let k = cfg.content_tokens;

    let mut contents = Vec::with_capacity(n * cfg.per_class);
    let mut texts = Vec::with_capacity(n * cfg.per_class);
    for class in 0..n {
        for _ in 0..cfg.per_class {
            let content = g.draw_content(k, &[]);
            let text = g.render(class, &content);
            contents.push(content);
            texts.push(SynthText { class, text });
        }
    }

    let mut labeled = Vec::with_capacity(3 * texts.len());
    let mut triplets = Vec::with_capacity(texts.len());
    let mut triplet_classes = Vec::with_capacity(texts.len());
    for i in 0..texts.len() {
        let c = texts[i].class;
        let premise = &texts[i].text;
        let entailed = g.variant(c, &contents[i], cfg.positive_overlap);
        let adjacent = if g.rng.gen_bool(0.5) { (c + 1) % n } else { (c + n - 1) % n };
        let adj_content = g.draw_content(k, &[]);
        let neutral = g.render(adjacent, &adj_content);
        let distant: Vec<usize> = (0..n).filter(|&o| ring_distance(c, o, n) >= 2).collect();
        let oc = if distant.is_empty() { g.other_class(c) } else { distant[g.rng.gen_range(0..distant.len())] };
        let other = g.draw_content(k, &[]);
        let contradicting = g.render(oc, &other);
        labeled.push(LabeledPair { premise: premise.clone(), hypothesis: entailed.clone(), label: Label::Entailment });
        labeled.push(LabeledPair { premise: premise.clone(), hypothesis: neutral, label: Label::Neutral });
        labeled.push(LabeledPair {
            premise: premise.clone(),
            hypothesis: contradicting.clone(),
            label: Label::Contradiction,
        });
        triplets.push(TripletExample { anchor: premise.clone(), positive: entailed, negative: contradicting });
        triplet_classes.push((c, c, oc));
    }

    let mut scored = Vec::with_capacity(texts.len());
    let mut scored_classes = Vec::with_capacity(texts.len());
    for i in 0..texts.len() {
        let c = texts[i].class;
        let level = (i % (k + 1)).min(k);
        let (bc, b_content) = if level == 0 {
            let oc = g.other_class(c);
            (oc, g.draw_content(k, &[]))
        } else {
            (c, g.shared_content(&contents[i], level))
        };
        let text_b = g.render(bc, &b_content);
        let set_a: BTreeSet<String> = contents[i].iter().map(|&t| class_token(c, t)).collect();
        let set_b: BTreeSet<String> = b_content.iter().map(|&t| class_token(bc, t)).collect();
        let gold = quantized_overlap(
            &set_a.iter().map(String::as_str).collect(),
            &set_b.iter().map(String::as_str).collect(),
        ) * SCORE_MAX;
        scored.push(ScoredPair { text_a: texts[i].text.clone(), text_b, gold_score: gold });
        scored_classes.push((c, bc));
    }

    let mut vocabulary = Vec::with_capacity(cfg.vocab_size);
    for class in 0..n {
        for t in 0..class_pool {
            vocabulary.push(class_token(class, t));
        }
    }
    for t in 0..shared_pool {
        vocabulary.push(shared_token(t));
    }

    Ok(SynthCorpus { config: cfg, texts, triplets, triplet_classes, labeled, scored, scored_classes, vocabulary })
}

/// Seed for the held-out companion of a corpus generated with `seed`. Same
/// vocabulary, unseen texts.
pub fn heldout_seed(seed: u64) -> u64 {
    derive_seed(seed, 0x4845_4C44)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn label_parsing() {
        assert_eq!(Label::parse("Neutral").unwrap(), Label::Neutral);
        assert_eq!(Label::parse("2").unwrap(), Label::Contradiction);
        assert_eq!(Label::parse("maybe"), Err(DataError::UnknownLabel("maybe".into())));
        assert_eq!(Label::Entailment.code(), 0);
        assert_eq!(Label::Contradiction.code(), 2);
    }

    #[test]
    fn scored_pair_normalizes() {
        let p = ScoredPair::new("a", "b", 2.5).unwrap();
        assert_eq!(p.normalized(), 0.5);
        assert_eq!(ScoredPair::new("a", "b", 5.5), Err(DataError::ScoreOutOfRange(5.5)));
        assert_eq!(ScoredPair::new("a", " ", 1.0), Err(DataError::EmptyField("text_b")));
    }

    #[test]
    fn stats_flag_duplicates() {
        let t = vec![
            TripletExample::new("a", "a", "b").unwrap(),
            TripletExample::new("a", "c", "b").unwrap(),
            TripletExample::new("a", "c", "b").unwrap(),
        ];
        let s = IngestStats::for_triplets(&t);
        assert_eq!((s.records, s.self_duplicates, s.repeated_records), (3, 1, 1));
    }

    #[test]
    fn batches_sizes_and_determinism() {
        let recs: Vec<LabeledPair> =
            (0..10).map(|i| LabeledPair::new(format!("p{i}"), "h", Label::Neutral).unwrap()).collect();
        let sizes: Vec<usize> = batch_iter(&recs, 4, 7, 0).unwrap().map(|b| b.items.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let a: Vec<_> = batch_iter(&recs, 4, 7, 0).unwrap().collect();
        let b: Vec<_> = batch_iter(&recs, 4, 7, 0).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(epoch_permutation(10, 7, 0), epoch_permutation(10, 7, 1));
    }

    #[test]
    fn triplets_need_two_per_batch() {
        let t = vec![TripletExample::new("a", "b", "c").unwrap()];
        assert!(matches!(batch_iter(&t, 1, 0, 0), Err(DataError::Config(_))));
        assert!(batch_iter(&t, 2, 0, 0).is_ok());
    }

    #[test]
    fn synth_rejects_bad_config() {
        assert!(matches!(synth_corpus(4, 10, 3, 1), Err(DataError::Config(_))));
        assert!(matches!(synth_corpus(1, 10, 30, 1), Err(DataError::Config(_))));
    }

    #[test]
    fn token_names_round_trip() {
        assert_eq!(token_class(&class_token(11, 3)), Some(11));
        assert_eq!(token_class(&shared_token(3)), None);
    }
}
