//! STS evaluation: correlation grids over truncation dims and similarity
//! kinds, dimension retention, single-pair score cards and pair
//! classification accuracy.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledPair, ScoredPair};
use crate::encoder::Encoder;
use crate::losses::{predict_pair_label, truncate, LossError};
use crate::numerics::{pearson, similarity, spearman, Mat, NumericError, Side, SimilarityKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("gold scores are constant; correlation is undefined")]
    ConstantGold,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

pub type Result<T> = core::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Pearson,
    Spearman,
}

impl Correlation {
    pub const ALL: [Correlation; 2] = [Correlation::Pearson, Correlation::Spearman];

    pub fn name(self) -> &'static str {
        match self {
            Correlation::Pearson => "pearson",
            Correlation::Spearman => "spearman",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric a report is summarized by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headline {
    pub kind: SimilarityKind,
    pub correlation: Correlation,
}

impl Default for Headline {
    fn default() -> Self {
        Self { kind: SimilarityKind::Cosine, correlation: Correlation::Spearman }
    }
}

impl fmt::Display for Headline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.correlation, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalMeta {
    pub dataset: String,
    pub checkpoint: String,
    pub renormalize: bool,
    pub headline: Headline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub dim: usize,
    pub kind: SimilarityKind,
    pub correlation: Correlation,
    pub score: f64,
}

/// Complete correlation grid, ordered dim-major, then kind, then
/// correlation (pearson before spearman).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub dims: Vec<usize>,
    pub kinds: Vec<SimilarityKind>,
    pub entries: Vec<GridEntry>,
}

impl EvalReport {
    pub fn get(&self, dim: usize, kind: SimilarityKind, correlation: Correlation) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.dim == dim && e.kind == kind && e.correlation == correlation)
            .map(|e| e.score)
    }

    /// Headline metric at `dim`.
    pub fn headline(&self, dim: usize) -> Option<f64> {
        self.get(dim, self.meta.headline.kind, self.meta.headline.correlation)
    }

    pub fn full_dim(&self) -> Option<usize> {
        self.dims.iter().copied().max()
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.dims.len() * self.kinds.len() * Correlation::ALL.len()
            && self.dims.iter().all(|&m| {
                self.kinds.iter().all(|&k| Correlation::ALL.iter().all(|&c| self.get(m, k, c).is_some()))
            })
    }
}

fn view(z: &[f64], m: usize, renormalize: bool) -> Result<Vec<f64>> {
    Ok(truncate(z, m, renormalize)?)
}

/// A correlation with constant predictions carries no ranking signal and
/// is scored 0; constant gold is a domain error.
fn correlate(pred: &[f64], gold: &[f64], c: Correlation) -> Result<f64> {
    let r = match c {
        Correlation::Pearson => pearson(pred, gold),
        Correlation::Spearman => spearman(pred, gold),
    };
    match r {
        Ok(v) => Ok(v),
        Err(NumericError::ZeroVariance(Side::Left)) => Ok(0.0),
        Err(NumericError::ZeroVariance(Side::Right)) => Err(EvalError::ConstantGold),
        Err(e) => Err(e.into()),
    }
}

/// The grid from precomputed full-width embeddings of each pair side.
pub fn eval_sts_embeddings(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    gold: &[f64],
    dims: &[usize],
    kinds: &[SimilarityKind],
    meta: EvalMeta,
) -> Result<EvalReport> {
    let n = gold.len();
    if a.len() != n || b.len() != n {
        return Err(EvalError::Config(format!("{} / {} embeddings for {n} gold scores", a.len(), b.len())));
    }
    if n < 2 {
        return Err(EvalError::Config(format!("need at least 2 scored pairs, got {n}")));
    }
    if gold.iter().all(|g| *g == gold[0]) {
        return Err(EvalError::ConstantGold);
    }
    if dims.is_empty() || kinds.is_empty() {
        return Err(EvalError::Config(String::from("empty dims or similarity kinds")));
    }
    let renormalize = meta.renormalize;
    let mut entries = Vec::with_capacity(dims.len() * kinds.len() * 2);
    for &m in dims {
        let va: Vec<Vec<f64>> = a.iter().map(|z| view(z, m, renormalize)).collect::<Result<_>>()?;
        let vb: Vec<Vec<f64>> = b.iter().map(|z| view(z, m, renormalize)).collect::<Result<_>>()?;
        for &kind in kinds {
            let pred: Vec<f64> =
                va.iter().zip(&vb).map(|(x, y)| similarity(kind, x, y)).collect::<core::result::Result<_, _>>()?;
            for correlation in Correlation::ALL {
                entries.push(GridEntry { dim: m, kind, correlation, score: correlate(&pred, gold, correlation)? });
            }
        }
    }
    Ok(EvalReport { meta, dims: dims.to_vec(), kinds: kinds.to_vec(), entries })
}

/// Embeds both sides of every scored pair and builds the grid.
pub fn eval_sts(
    encoder: &Encoder,
    pairs: &[ScoredPair],
    dims: &[usize],
    kinds: &[SimilarityKind],
    meta: EvalMeta,
) -> Result<EvalReport> {
    let d = encoder.out_dim();
    if let Some(m) = dims.iter().find(|&&m| m == 0 || m > d) {
        return Err(EvalError::Config(format!("dimension {m} outside 1..={d}")));
    }
    let a: Vec<Vec<f64>> = pairs.iter().map(|p| encoder.embed(&p.text_a)).collect();
    let b: Vec<Vec<f64>> = pairs.iter().map(|p| encoder.embed(&p.text_b)).collect();
    let gold: Vec<f64> = pairs.iter().map(|p| p.gold_score).collect();
    eval_sts_embeddings(&a, &b, &gold, dims, kinds, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub dim: usize,
    pub average: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    pub full_dim: usize,
    pub headline: Headline,
    /// One row per dim, largest first.
    pub rows: Vec<RetentionRow>,
}

impl RetentionSummary {
    pub fn ratio(&self, dim: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.dim == dim).map(|r| r.ratio)
    }

    pub fn average(&self, dim: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.dim == dim).map(|r| r.average)
    }
}

/// Retention of a single report.
pub fn retention(report: &EvalReport) -> Result<RetentionSummary> {
    retention_across(core::slice::from_ref(report))
}

/// Headline metric per dim averaged over `reports`, divided by the average
/// at the largest dim. All reports must share dims and headline.
pub fn retention_across(reports: &[EvalReport]) -> Result<RetentionSummary> {
    let first = reports.first().ok_or_else(|| EvalError::Config(String::from("no reports")))?;
    let headline = first.meta.headline;
    let mut dims = first.dims.clone();
    dims.sort_unstable_by(|a, b| b.cmp(a));
    let full_dim = dims[0];
    if reports.iter().any(|r| r.meta.headline != headline) {
        return Err(EvalError::Contract(String::from("reports disagree on the headline metric")));
    }
    let average = |m: usize| -> Result<f64> {
        let mut acc = 0.0;
        for r in reports {
            acc += r
                .headline(m)
                .ok_or_else(|| EvalError::Contract(format!("report '{}' is missing dim {m}", r.meta.dataset)))?;
        }
        Ok(acc / reports.len() as f64)
    };
    let full = average(full_dim)?;
    if full == 0.0 || !full.is_finite() {
        return Err(EvalError::Contract(format!("full-dim score {full} cannot anchor retention")));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for m in dims {
        let avg = average(m)?;
        rows.push(RetentionRow { dim: m, average: avg, ratio: avg / full });
    }
    Ok(RetentionSummary { full_dim, headline, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub text_a: String,
    pub text_b: String,
    pub dim: usize,
    pub renormalize: bool,
    pub scores: Vec<(SimilarityKind, f64)>,
}

impl ScoreCard {
    pub fn score(&self, kind: SimilarityKind) -> Option<f64> {
        self.scores.iter().find(|(k, _)| *k == kind).map(|(_, s)| *s)
    }
}

/// All four similarity kinds for one pair at truncation `dim`.
pub fn inspect_pair(encoder: &Encoder, text_a: &str, text_b: &str, dim: usize, renormalize: bool) -> Result<ScoreCard> {
    if dim == 0 || dim > encoder.out_dim() {
        return Err(EvalError::Config(format!("dimension {dim} outside 1..={}", encoder.out_dim())));
    }
    let a = view(&encoder.embed(text_a), dim, renormalize)?;
    let b = view(&encoder.embed(text_b), dim, renormalize)?;
    let scores = SimilarityKind::ALL
        .into_iter()
        .map(|k| similarity(k, &a, &b).map(|s| (k, s)))
        .collect::<core::result::Result<_, _>>()?;
    Ok(ScoreCard { text_a: String::from(text_a), text_b: String::from(text_b), dim, renormalize, scores })
}

/// Fraction of labeled pairs whose label the pair head predicts.
pub fn classification_accuracy(encoder: &Encoder, head: &Mat, pairs: &[LabeledPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::Config(String::from("no labeled pairs")));
    }
    if head.cols() != 3 * encoder.out_dim() {
        return Err(EvalError::Config(format!(
            "head expects {} features, encoder gives {}",
            head.cols(),
            3 * encoder.out_dim()
        )));
    }
    let correct = pairs
        .iter()
        .filter(|p| {
            predict_pair_label(&encoder.embed(&p.premise), &encoder.embed(&p.hypothesis), head) == p.label.code()
        })
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn meta(renormalize: bool) -> EvalMeta {
        EvalMeta { dataset: "toy".into(), checkpoint: "none".into(), renormalize, headline: Headline::default() }
    }

    #[test]
    fn grid_is_complete_and_ordered() {
        let a = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.2], vec![1.0, 1.0, -0.3]];
        let b = vec![vec![1.0, 0.1, 0.0], vec![1.0, 0.0, 0.4], vec![0.5, 1.0, 1.0]];
        let r = eval_sts_embeddings(&a, &b, &[5.0, 0.0, 2.5], &[3, 2], &SimilarityKind::ALL, meta(false)).unwrap();
        assert!(r.is_complete());
        assert_eq!(r.entries.len(), 2 * 4 * 2);
        assert_eq!(r.entries[0].dim, 3);
        assert_eq!(r.entries[1].correlation, Correlation::Spearman);
    }

    #[test]
    fn constant_gold_is_an_error() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = eval_sts_embeddings(&a, &a, &[1.0, 1.0], &[2], &[SimilarityKind::Cosine], meta(false));
        assert_eq!(r, Err(EvalError::ConstantGold));
    }

    #[test]
    fn retention_of_flat_report_is_one() {
        let a = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]];
        let b = vec![vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]];
        let r = eval_sts_embeddings(&a, &b, &[5.0, 0.0, 2.0], &[4, 2], &[SimilarityKind::Cosine], meta(true)).unwrap();
        let s = retention(&r).unwrap();
        assert_eq!(s.ratio(4), Some(1.0));
        assert_eq!(s.ratio(2), Some(1.0));
    }
}
