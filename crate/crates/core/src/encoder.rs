//! Bag-of-tokens sentence encoder: token lookup, mean pooling, a linear
//! projection and optional L2 normalization, with an exact backward pass.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{dot, norm, Mat};

pub const UNK_TOKEN: &str = "[unk]";
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(&'static str),
    #[error("tokenizer has {tokenizer} entries but the embedding table has {table} rows")]
    VocabMismatch { tokenizer: usize, table: usize },
    #[error("dimension must be at least 1: {0}")]
    ZeroDim(&'static str),
}

/// Whitespace tokenizer with lowercase folding. Id 0 is reserved for
/// [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
    max_len: usize,
}

impl Tokenizer {
    /// Builds a tokenizer whose ids follow `tokens` (after the unknown
    /// token); duplicates and the unknown token itself are skipped.
    pub fn new<I, S>(tokens: I, max_len: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all = vec![UNK_TOKEN.to_string()];
        let mut ids = BTreeMap::new();
        ids.insert(UNK_TOKEN.to_string(), 0u32);
        for t in tokens {
            let t = t.as_ref().to_lowercase();
            if !ids.contains_key(&t) {
                ids.insert(t.clone(), all.len() as u32);
                all.push(t);
            }
        }
        Self { tokens: all, ids, max_len: max_len.max(1) }
    }

    /// Vocabulary of every whitespace token in `texts`, sorted.
    pub fn from_texts<'a, I>(texts: I, max_len: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = alloc::collections::BTreeSet::new();
        for text in texts {
            for tok in text.split_whitespace() {
                seen.insert(tok.to_lowercase());
            }
        }
        Self::new(seen, max_len)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    /// Tokens in id order, starting with [`UNK_TOKEN`].
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(0)
    }

    /// Never empty: a text without tokens encodes as a single unknown token.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out: Vec<u32> = text
            .split_whitespace()
            .take(self.max_len)
            .map(|t| match self.ids.get(t) {
                Some(&id) => id,
                None => self.id(&t.to_lowercase()),
            })
            .collect();
        if out.is_empty() {
            out.push(0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// vocab × hidden
    pub embed_table: Mat,
    /// hidden × out_dim
    pub proj: Mat,
    pub proj_bias: Vec<f64>,
    pub normalize_output: bool,
}

impl EncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.embed_table.rows()
    }

    pub fn hidden(&self) -> usize {
        self.embed_table.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.proj.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.embed_table.is_finite() && self.proj.is_finite() && self.proj_bias.iter().all(|v| v.is_finite())
    }
}

/// Seeded uniform(−1/√h, 1/√h) draws for the table and projection; zero
/// bias; output normalization on.
pub fn init_params(vocab_size: usize, hidden: usize, out_dim: usize, seed: u64) -> Result<EncoderParams, EncoderError> {
    if vocab_size == 0 {
        return Err(EncoderError::ZeroDim("vocab_size"));
    }
    if hidden == 0 {
        return Err(EncoderError::ZeroDim("hidden"));
    }
    if out_dim == 0 {
        return Err(EncoderError::ZeroDim("out_dim"));
    }
    let bound = 1.0 / libm::sqrt(hidden as f64);
    let dist = Uniform::new(-bound, bound);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed_table = Mat::from_fn(vocab_size, hidden, |_, _| dist.sample(&mut rng));
    let proj = Mat::from_fn(hidden, out_dim, |_, _| dist.sample(&mut rng));
    Ok(EncoderParams { embed_table, proj, proj_bias: vec![0.0; out_dim], normalize_output: true })
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub token_ids: Vec<u32>,
    pub pooled: Vec<f64>,
    pub pre_norm: Vec<f64>,
    pub output: Vec<f64>,
}

/// Forward pass over token ids. Ids must be valid rows of the table.
pub fn encode_ids(params: &EncoderParams, ids: &[u32]) -> ForwardTrace {
    let h = params.hidden();
    let d = params.out_dim();
    let mut pooled = vec![0.0; h];
    for &id in ids {
        for (p, e) in pooled.iter_mut().zip(params.embed_table.row(id as usize)) {
            *p += e;
        }
    }
    let len = ids.len() as f64;
    for p in &mut pooled {
        *p /= len;
    }
    let mut pre = params.proj_bias.clone();
    for (k, pk) in pooled.iter().enumerate() {
        let row = params.proj.row(k);
        for j in 0..d {
            pre[j] += pk * row[j];
        }
    }
    let output = if params.normalize_output {
        let n = norm(&pre);
        if n > 0.0 {
            pre.iter().map(|v| v / n).collect()
        } else {
            pre.clone()
        }
    } else {
        pre.clone()
    };
    ForwardTrace { token_ids: ids.to_vec(), pooled, pre_norm: pre, output }
}

/// Dense parameter gradients, shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embed_table: Mat,
    pub proj: Mat,
    pub proj_bias: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            embed_table: Mat::zeros(params.vocab_size(), params.hidden()),
            proj: Mat::zeros(params.hidden(), params.out_dim()),
            proj_bias: vec![0.0; params.out_dim()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.embed_table.as_slice().iter().chain(self.proj.as_slice()).chain(&self.proj_bias).all(|v| *v == 0.0)
    }
}

/// Adds the parameter gradient of `d_output · encode(...)` into `grads`.
pub fn backward_into(
    params: &EncoderParams,
    trace: &ForwardTrace,
    d_output: &[f64],
    grads: &mut EncoderGrads,
) -> Result<(), EncoderError> {
    let h = params.hidden();
    let d = params.out_dim();
    if trace.pooled.len() != h {
        return Err(EncoderError::TraceMismatch("pooled width"));
    }
    if trace.pre_norm.len() != d || trace.output.len() != d {
        return Err(EncoderError::TraceMismatch("output width"));
    }
    if d_output.len() != d {
        return Err(EncoderError::TraceMismatch("output gradient width"));
    }
    if trace.token_ids.is_empty() || trace.token_ids.iter().any(|&id| id as usize >= params.vocab_size()) {
        return Err(EncoderError::TraceMismatch("token ids"));
    }
    if grads.embed_table.rows() != params.vocab_size()
        || grads.embed_table.cols() != h
        || grads.proj.rows() != h
        || grads.proj.cols() != d
        || grads.proj_bias.len() != d
    {
        return Err(EncoderError::TraceMismatch("gradient buffer shape"));
    }

    // Through the normalization: d_pre = (g - y (y·g)) / |pre|
    let n = norm(&trace.pre_norm);
    let d_pre: Vec<f64> = if params.normalize_output && n > 0.0 {
        let yg = dot(&trace.output, d_output);
        d_output.iter().zip(&trace.output).map(|(g, y)| (g - y * yg) / n).collect()
    } else {
        d_output.to_vec()
    };

    for (b, g) in grads.proj_bias.iter_mut().zip(&d_pre) {
        *b += g;
    }
    let mut d_pooled = vec![0.0; h];
    for k in 0..h {
        let pk = trace.pooled[k];
        let grow = grads.proj.row_mut(k);
        for j in 0..d {
            grow[j] += pk * d_pre[j];
        }
        d_pooled[k] = dot(params.proj.row(k), &d_pre);
    }
    let inv_len = 1.0 / trace.token_ids.len() as f64;
    for &id in &trace.token_ids {
        let row = grads.embed_table.row_mut(id as usize);
        for (r, g) in row.iter_mut().zip(&d_pooled) {
            *r += g * inv_len;
        }
    }
    Ok(())
}

pub fn backward(params: &EncoderParams, trace: &ForwardTrace, d_output: &[f64]) -> Result<EncoderGrads, EncoderError> {
    let mut g = EncoderGrads::zeros_like(params);
    backward_into(params, trace, d_output, &mut g)?;
    Ok(g)
}

/// Tokenizer and parameters travelling together.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub tokenizer: Tokenizer,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new(tokenizer: Tokenizer, params: EncoderParams) -> Result<Self, EncoderError> {
        if tokenizer.vocab_size() != params.vocab_size() {
            return Err(EncoderError::VocabMismatch { tokenizer: tokenizer.vocab_size(), table: params.vocab_size() });
        }
        Ok(Self { tokenizer, params })
    }

    pub fn encode(&self, text: &str) -> (Vec<f64>, ForwardTrace) {
        let trace = encode_ids(&self.params, &self.tokenizer.tokenize(text));
        (trace.output.clone(), trace)
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        encode_ids(&self.params, &self.tokenizer.tokenize(text)).output
    }

    pub fn out_dim(&self) -> usize {
        self.params.out_dim()
    }
}
