//! JSONL and TSV readers/writers for the three record schemas.
//!
//! JSONL field names: triplet `anchor, positive, negative`; labeled pair
//! `premise, hypothesis, label`; scored pair `text_a, text_b, score`. TSV
//! files carry the same fields as tab-separated columns in that order, with
//! no header.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nestembed_core::data::{IngestStats, Label, LabeledPair, Schema, ScoredPair, TripletExample};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg} at line {line}", path.display())]
    Line { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

type Result<T> = std::result::Result<T, IoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "jsonl" => Some(Format::Jsonl),
            "tsv" => Some(Format::Tsv),
            _ => None,
        }
    }

    /// Guessed from the file extension; `.json`/`.jsonl` vs `.tsv`.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Format::Jsonl),
            "tsv" => Some(Format::Tsv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Triplets(Vec<TripletExample>),
    Labeled(Vec<LabeledPair>),
    Scored(Vec<ScoredPair>),
}

impl Dataset {
    pub fn schema(&self) -> Schema {
        match self {
            Dataset::Triplets(_) => Schema::Triplet,
            Dataset::Labeled(_) => Schema::LabeledPair,
            Dataset::Scored(_) => Schema::ScoredPair,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Triplets(r) => r.len(),
            Dataset::Labeled(r) => r.len(),
            Dataset::Scored(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> IngestStats {
        match self {
            Dataset::Triplets(r) => IngestStats::for_triplets(r),
            Dataset::Labeled(r) => IngestStats::for_labeled(r),
            Dataset::Scored(r) => IngestStats::for_scored(r),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledRow {
    premise: String,
    hypothesis: String,
    label: serde_json::Value,
}

#[derive(Serialize)]
struct LabeledOut<'a> {
    premise: &'a str,
    hypothesis: &'a str,
    label: &'a str,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoredRow {
    text_a: String,
    text_b: String,
    score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletRow {
    anchor: String,
    positive: String,
    negative: String,
}

fn parse_label(v: &serde_json::Value) -> std::result::Result<Label, String> {
    let token = match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string(),
    };
    Label::parse(&token).map_err(|e| e.to_string())
}

fn parse_score(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("score '{}' is not a number", s.trim()))?;
    if !v.is_finite() {
        return Err(format!("score '{}' is not finite", s.trim()));
    }
    Ok(v)
}

fn tsv_fields(line: &str, want: usize) -> std::result::Result<Vec<&str>, String> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != want {
        return Err(format!("expected {want} tab-separated columns, found {}", f.len()));
    }
    Ok(f)
}

fn parse_line(schema: Schema, format: Format, line: &str) -> std::result::Result<Record, String> {
    let rec = match (schema, format) {
        (Schema::Triplet, Format::Jsonl) => {
            let r: TripletRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Record::Triplet(TripletExample { anchor: r.anchor, positive: r.positive, negative: r.negative })
        }
        (Schema::Triplet, Format::Tsv) => {
            let f = tsv_fields(line, 3)?;
            Record::Triplet(TripletExample { anchor: f[0].into(), positive: f[1].into(), negative: f[2].into() })
        }
        (Schema::LabeledPair, Format::Jsonl) => {
            let r: LabeledRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let label = parse_label(&r.label)?;
            Record::Labeled(LabeledPair { premise: r.premise, hypothesis: r.hypothesis, label })
        }
        (Schema::LabeledPair, Format::Tsv) => {
            let f = tsv_fields(line, 3)?;
            let label = Label::parse(f[2]).map_err(|e| e.to_string())?;
            Record::Labeled(LabeledPair { premise: f[0].into(), hypothesis: f[1].into(), label })
        }
        (Schema::ScoredPair, Format::Jsonl) => {
            let r: ScoredRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Record::Scored(ScoredPair { text_a: r.text_a, text_b: r.text_b, gold_score: r.score })
        }
        (Schema::ScoredPair, Format::Tsv) => {
            let f = tsv_fields(line, 3)?;
            Record::Scored(ScoredPair { text_a: f[0].into(), text_b: f[1].into(), gold_score: parse_score(f[2])? })
        }
    };
    let checked = match &rec {
        Record::Triplet(r) => r.validate(),
        Record::Labeled(r) => r.validate(),
        Record::Scored(r) => r.validate(),
    };
    checked.map_err(|e| e.to_string())?;
    Ok(rec)
}

enum Record {
    Triplet(TripletExample),
    Labeled(LabeledPair),
    Scored(ScoredPair),
}

/// Reads and validates every record. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_dataset(path: &Path, schema: Schema, format: Format) -> Result<(Dataset, IngestStats)> {
    let file = fs::File::open(path).map_err(|source| IoError::Io { path: path.into(), source })?;
    let mut ds = match schema {
        Schema::Triplet => Dataset::Triplets(Vec::new()),
        Schema::LabeledPair => Dataset::Labeled(Vec::new()),
        Schema::ScoredPair => Dataset::Scored(Vec::new()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Io { path: path.into(), source })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(schema, format, line).map_err(|msg| IoError::Line { path: path.into(), line: i + 1, msg })?;
        match (&mut ds, rec) {
            (Dataset::Triplets(v), Record::Triplet(r)) => v.push(r),
            (Dataset::Labeled(v), Record::Labeled(r)) => v.push(r),
            (Dataset::Scored(v), Record::Scored(r)) => v.push(r),
            _ => unreachable!("parse_line follows the schema"),
        }
    }
    let stats = ds.stats();
    Ok((ds, stats))
}

pub fn load_triplets(path: &Path, format: Format) -> Result<(Vec<TripletExample>, IngestStats)> {
    match load_dataset(path, Schema::Triplet, format)? {
        (Dataset::Triplets(v), s) => Ok((v, s)),
        _ => unreachable!(),
    }
}

pub fn load_labeled(path: &Path, format: Format) -> Result<(Vec<LabeledPair>, IngestStats)> {
    match load_dataset(path, Schema::LabeledPair, format)? {
        (Dataset::Labeled(v), s) => Ok((v, s)),
        _ => unreachable!(),
    }
}

pub fn load_scored(path: &Path, format: Format) -> Result<(Vec<ScoredPair>, IngestStats)> {
    match load_dataset(path, Schema::ScoredPair, format)? {
        (Dataset::Scored(v), s) => Ok((v, s)),
        _ => unreachable!(),
    }
}

fn tsv_safe(s: &str) -> std::result::Result<&str, String> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(format!("text {s:?} contains a tab or line break and cannot be written as TSV"));
    }
    Ok(s)
}

fn render_line(ds: &Dataset, i: usize, format: Format, out: &mut String) -> std::result::Result<(), String> {
    let json = |v: serde_json::Result<String>| v.map_err(|e| e.to_string());
    match (ds, format) {
        (Dataset::Triplets(r), Format::Jsonl) => out.push_str(&json(serde_json::to_string(&r[i]))?),
        (Dataset::Labeled(r), Format::Jsonl) => {
            let p = &r[i];
            let row = LabeledOut { premise: &p.premise, hypothesis: &p.hypothesis, label: p.label.name() };
            out.push_str(&json(serde_json::to_string(&row))?);
        }
        (Dataset::Scored(r), Format::Jsonl) => {
            let p = &r[i];
            let row = ScoredRow { text_a: p.text_a.clone(), text_b: p.text_b.clone(), score: p.gold_score };
            out.push_str(&json(serde_json::to_string(&row))?);
        }
        (Dataset::Triplets(r), Format::Tsv) => {
            let t = &r[i];
            let _ = write!(out, "{}\t{}\t{}", tsv_safe(&t.anchor)?, tsv_safe(&t.positive)?, tsv_safe(&t.negative)?);
        }
        (Dataset::Labeled(r), Format::Tsv) => {
            let p = &r[i];
            let _ = write!(out, "{}\t{}\t{}", tsv_safe(&p.premise)?, tsv_safe(&p.hypothesis)?, p.label);
        }
        (Dataset::Scored(r), Format::Tsv) => {
            let p = &r[i];
            let _ = write!(out, "{}\t{}\t{}", tsv_safe(&p.text_a)?, tsv_safe(&p.text_b)?, p.gold_score);
        }
    }
    out.push('\n');
    Ok(())
}

/// Writes `ds` so that [`load_dataset`] reads back equal records.
pub fn write_dataset(path: &Path, ds: &Dataset, format: Format) -> Result<()> {
    let mut buf = String::new();
    for i in 0..ds.len() {
        render_line(ds, i, format, &mut buf).map_err(|msg| IoError::Format { path: path.into(), msg })?;
    }
    write_file(path, buf.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| IoError::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(err)?);
    w.write_all(bytes).map_err(err)?;
    w.flush().map_err(err)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| IoError::Io { path: path.into(), source })
}
