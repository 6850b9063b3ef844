//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"NESTCKPT"
//! u32    format version
//! u64    header length in bytes
//! [u8]   JSON header: vocabulary, dims, flags, tensor table, run config
//! [f64]  tensor payload, in tensor-table order
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a write/read round trip is
//! bit-exact. Batch order is derived from the seed in the run config, which
//! is all the random state a resumed run needs.

use std::path::Path;

use nestembed_core::encoder::{Encoder, EncoderParams, Tokenizer};
use nestembed_core::numerics::Mat;
use nestembed_core::trainer::{MomentState, OptimizerState, RunConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::io::{read_file, write_file, IoError};

pub const MAGIC: &[u8; 8] = b"NESTCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    Version(u32),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    /// Tokenizer entries in id order, unknown token first.
    vocab: Vec<String>,
    max_len: usize,
    hidden: usize,
    out_dim: usize,
    normalize_output: bool,
    has_head: bool,
    optimizer_step: u64,
    optimizer_groups: Vec<String>,
    tensors: Vec<TensorEntry>,
    run: RunConfig,
}

/// A training state plus the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub run: RunConfig,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

pub fn to_bytes(state: &TrainState, run: &RunConfig) -> Vec<u8> {
    let p = &state.encoder.params;
    let mut tensors = vec![
        (TensorEntry { name: "embed_table".into(), shape: vec![p.embed_table.rows(), p.embed_table.cols()] }, p.embed_table.as_slice()),
        (TensorEntry { name: "proj".into(), shape: vec![p.proj.rows(), p.proj.cols()] }, p.proj.as_slice()),
        (TensorEntry { name: "proj_bias".into(), shape: vec![p.proj_bias.len()] }, &p.proj_bias[..]),
    ];
    if let Some(h) = &state.head {
        tensors.push((TensorEntry { name: "head".into(), shape: vec![h.rows(), h.cols()] }, h.as_slice()));
    }
    for g in &state.optimizer.groups {
        tensors.push((TensorEntry { name: format!("adam_m.{}", g.name), shape: vec![g.m.len()] }, &g.m[..]));
        tensors.push((TensorEntry { name: format!("adam_v.{}", g.name), shape: vec![g.v.len()] }, &g.v[..]));
    }
    let header = Header {
        vocab: state.encoder.tokenizer.tokens().to_vec(),
        max_len: state.encoder.tokenizer.max_len(),
        hidden: p.hidden(),
        out_dim: p.out_dim(),
        normalize_output: p.normalize_output,
        has_head: state.head.is_some(),
        optimizer_step: state.optimizer.step,
        optimizer_groups: state.optimizer.groups.iter().map(|g| g.name.clone()).collect(),
        tensors: tensors.iter().map(|(e, _)| e.clone()).collect(),
        run: run.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let payload: usize = tensors.iter().map(|(_, v)| v.len()).sum();
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 8 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in &tensors {
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(corrupt("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("malformed header: {e}")))?;
    let payload = &body[hlen..];
    let want: usize = header.tensors.iter().map(TensorEntry::len).sum();
    if payload.len() != 8 * want {
        return Err(corrupt(format!("payload holds {} bytes, tensor table needs {}", payload.len(), 8 * want)));
    }
    let mut offsets = std::collections::BTreeMap::new();
    let mut at = 0;
    for t in &header.tensors {
        if offsets.insert(t.name.as_str(), (at, t)).is_some() {
            return Err(corrupt(format!("duplicate tensor '{}'", t.name)));
        }
        at += t.len();
    }
    let take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (start, entry) = offsets.get(name).ok_or_else(|| corrupt(format!("missing tensor '{name}'")))?;
        if entry.shape != shape {
            return Err(corrupt(format!("tensor '{name}' has shape {:?}, expected {shape:?}", entry.shape)));
        }
        let bytes = &payload[8 * start..8 * (start + entry.len())];
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let shape_of = |name: &str| offsets.get(name).map(|(_, t)| t.shape.clone());
    let (v, h, d) = (header.vocab.len(), header.hidden, header.out_dim);
    let mat = |r, c, vals| Mat::from_vec(r, c, vals).map_err(|e| corrupt(e.to_string()));
    let embed_table = mat(v, h, take("embed_table", &[v, h])?)?;
    let proj = mat(h, d, take("proj", &[h, d])?)?;
    let proj_bias = take("proj_bias", &[d])?;
    let head = if header.has_head {
        let shape = shape_of("head").ok_or_else(|| corrupt("missing tensor 'head'"))?;
        if shape.len() != 2 {
            return Err(corrupt("head must be a matrix"));
        }
        Some(mat(shape[0], shape[1], take("head", &shape)?)?)
    } else {
        None
    };
    let mut groups = Vec::with_capacity(header.optimizer_groups.len());
    for name in &header.optimizer_groups {
        let shape = shape_of(&format!("adam_m.{name}"))
            .ok_or_else(|| corrupt(format!("missing moments for group '{name}'")))?;
        let m = take(&format!("adam_m.{name}"), &shape)?;
        let v = take(&format!("adam_v.{name}"), &shape)?;
        groups.push(MomentState { name: name.clone(), m, v });
    }
    let tokenizer = Tokenizer::new(&header.vocab, header.max_len);
    if tokenizer.tokens() != header.vocab.as_slice() {
        return Err(corrupt("vocabulary is not in canonical tokenizer order"));
    }
    let params = EncoderParams { embed_table, proj, proj_bias, normalize_output: header.normalize_output };
    let encoder = Encoder::new(tokenizer, params).map_err(|e| corrupt(e.to_string()))?;
    let optimizer = OptimizerState { step: header.optimizer_step, groups };
    Ok(Checkpoint { state: TrainState { encoder, head, optimizer }, run: header.run })
}

pub fn save(path: &Path, state: &TrainState, run: &RunConfig) -> Result<()> {
    Ok(write_file(path, &to_bytes(state, run))?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&read_file(path)?).map_err(|e| match e {
        CheckpointError::Corrupt(msg) => CheckpointError::Corrupt(format!("{}: {msg}", path.display())),
        other => other,
    })
}
