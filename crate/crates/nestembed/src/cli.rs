//! Command-line driver. [`run`] returns the process exit code: 0 on
//! success, 1 when flags or configuration fail validation, 2 when a
//! command fails at runtime.

use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nestembed_core::data::{heldout_seed, synth_corpus_with, LabeledPair, ScoredPair, SynthConfig, TripletExample};
use nestembed_core::encoder::{init_params, Encoder, Tokenizer};
use nestembed_core::eval::{
    classification_accuracy, eval_sts, inspect_pair, retention, EvalMeta, EvalReport, Headline,
};
use nestembed_core::gradcheck;
use nestembed_core::losses::{truncate, ClassificationForm, MatryoshkaSchedule};
use nestembed_core::numerics::SimilarityKind;
use nestembed_core::trainer::{train, EvalPlan, Regime, RunConfig, TrainData, TrainState};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::config;
use crate::io::{self, Dataset, Format, IoError};
use crate::report::{self, ReportFormat};
use crate::runlog::FileObserver;

/// Relative error a gradient check must stay under.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit 1.
    Validation(String),
    /// Failure while doing the work; exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "nestembed", version, about = "Train and evaluate nested-dimension text embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an encoder and write logs, checkpoints and eval reports
    Train(TrainArgs),
    /// Score a checkpoint on a scored-pair file over dims × similarity kinds
    Evaluate(EvaluateArgs),
    /// Write JSONL embeddings for one text per input line
    Embed(EmbedArgs),
    /// Print the similarity score card for one pair of texts
    Inspect(InspectArgs),
    /// Compare every loss gradient against central finite differences
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic triplet, labeled-pair and scored-pair files
    SynthData(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RegimeArg {
    MatryoshkaTriplet,
    HybridMultitask,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::MatryoshkaTriplet => Regime::MatryoshkaTriplet,
            RegimeArg::HybridMultitask => Regime::HybridMultitask,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassificationArg {
    SoftmaxHead,
    LabelNegative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Tsv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => Format::Jsonl,
            FormatArg::Tsv => Format::Tsv,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReportArg {
    Csv,
    Md,
    Json,
}

impl From<ReportArg> for ReportFormat {
    fn from(f: ReportArg) -> Self {
        match f {
            ReportArg::Csv => ReportFormat::Csv,
            ReportArg::Md => ReportFormat::Markdown,
            ReportArg::Json => ReportFormat::Json,
        }
    }
}

fn parse_kind(s: &str) -> std::result::Result<SimilarityKind, String> {
    SimilarityKind::from_name(s).ok_or_else(|| format!("unknown similarity kind '{s}' (cosine, dot, euclidean, manhattan)"))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run config; flags below override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for the log, checkpoints and reports
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Nested-dimension cut points, largest first (uniform weights)
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Train the triplet regime with plain full-width InfoNCE
    #[arg(long)]
    pub no_matryoshka: bool,
    #[arg(long, value_enum)]
    pub classification: Option<ClassificationArg>,
    /// Triplet training file (matryoshka-triplet regime)
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Labeled-pair training file (hybrid-multitask regime)
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Scored-pair training file (hybrid-multitask regime)
    #[arg(long)]
    pub scored: Option<PathBuf>,
    /// Held-out scored pairs evaluated at eval steps
    #[arg(long)]
    pub eval_scored: Option<PathBuf>,
    /// Held-out labeled pairs for head accuracy at eval steps
    #[arg(long)]
    pub eval_labeled: Option<PathBuf>,
    /// Input file format; guessed from the extension when omitted
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,md,json")]
    pub reports: Vec<ReportArg>,
    /// Continue from a checkpoint; its stored config is used unchanged
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Scored-pair file to evaluate on
    #[arg(long)]
    pub scored: PathBuf,
    /// Labeled pairs for head accuracy (checkpoints with a pair head)
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Dataset id for report metadata; defaults to the file stem
    #[arg(long)]
    pub dataset: Option<String>,
    /// Defaults to the checkpoint's training schedule
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    pub kinds: Option<Vec<SimilarityKind>>,
    /// Defaults to the checkpoint's loss setting
    #[arg(long)]
    pub renormalize: Option<bool>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Directory for report files; without it only stdout is written
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "csv,md,json")]
    pub reports: Vec<ReportArg>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One text per line; `-` reads standard input
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Truncation width; defaults to the full dimension
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub renormalize: bool,
    /// Output file; defaults to standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub renormalize: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per loss
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: FormatArg,
    /// Also write a held-out companion corpus with the same vocabulary
    #[arg(long)]
    pub heldout: bool,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, stdout, stderr),
        Command::Evaluate(a) => cmd_evaluate(a, stdout, stderr),
        Command::Embed(a) => cmd_embed(a, stdout),
        Command::Inspect(a) => cmd_inspect(a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(a, stdout),
        Command::SynthData(a) => cmd_synth(a, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn input_format(flag: Option<FormatArg>, path: &Path, name: &str) -> Result<Format> {
    match flag {
        Some(f) => Ok(f.into()),
        None => Format::from_path(path).ok_or_else(|| {
            invalid(format!("--{name} {}: cannot tell the format from the extension; pass --format", path.display()))
        }),
    }
}

fn load<T>(
    path: &Path,
    flag: Option<FormatArg>,
    name: &str,
    stderr: &mut dyn Write,
    pick: fn(Dataset) -> Option<Vec<T>>,
    schema: nestembed_core::data::Schema,
) -> Result<Vec<T>> {
    let fmt = input_format(flag, path, name)?;
    let (ds, stats) = io::load_dataset(path, schema, fmt).map_err(failed)?;
    let _ = writeln!(
        stderr,
        "{}: {} records, {} repeated, {} self-duplicates",
        path.display(),
        stats.records,
        stats.repeated_records,
        stats.self_duplicates
    );
    Ok(pick(ds).expect("loader honours the schema"))
}

fn load_triplets(p: &Path, f: Option<FormatArg>, n: &str, e: &mut dyn Write) -> Result<Vec<TripletExample>> {
    use nestembed_core::data::Schema;
    load(p, f, n, e, |d| if let Dataset::Triplets(v) = d { Some(v) } else { None }, Schema::Triplet)
}

fn load_labeled(p: &Path, f: Option<FormatArg>, n: &str, e: &mut dyn Write) -> Result<Vec<LabeledPair>> {
    use nestembed_core::data::Schema;
    load(p, f, n, e, |d| if let Dataset::Labeled(v) = d { Some(v) } else { None }, Schema::LabeledPair)
}

fn load_scored(p: &Path, f: Option<FormatArg>, n: &str, e: &mut dyn Write) -> Result<Vec<ScoredPair>> {
    use nestembed_core::data::Schema;
    load(p, f, n, e, |d| if let Dataset::Scored(v) = d { Some(v) } else { None }, Schema::ScoredPair)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
}

/// Applies command-line overrides on top of the config file.
fn resolve_run(a: &TrainArgs) -> Result<RunConfig> {
    let loaded = match &a.config {
        Some(p) => config::load(p).map_err(|e| invalid(e.to_string()))?,
        None => config::LoadedConfig { run: RunConfig::default(), seed_given: false },
    };
    let mut run = loaded.run;
    if let Some(r) = a.regime {
        run.train.regime = r.into();
        if a.batch_size.is_none() && a.config.is_none() {
            run.train.batch_size = nestembed_core::trainer::TrainConfig::for_regime(run.train.regime).batch_size;
        }
    }
    match (a.seed, loaded.seed_given) {
        (Some(s), _) => run.train.seed = s,
        (None, true) => {}
        (None, false) => return Err(invalid("a seed is required: pass --seed or set [train] seed in --config")),
    }
    let t = &mut run.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.warmup_ratio {
        t.warmup_ratio = v;
    }
    if let Some(v) = a.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if a.max_grad_norm.is_some() {
        t.max_grad_norm = a.max_grad_norm;
    }
    if let Some(v) = a.hidden {
        run.encoder.hidden = v;
    }
    if let Some(v) = a.out_dim {
        run.encoder.out_dim = v;
    }
    if let Some(d) = &a.dims {
        run.loss.schedule = Some(MatryoshkaSchedule::uniform(d.clone()).map_err(|e| invalid(format!("--dims: {e}")))?);
    }
    if a.no_matryoshka {
        run.loss.matryoshka = false;
    }
    if let Some(c) = a.classification {
        run.loss.classification = match c {
            ClassificationArg::SoftmaxHead => ClassificationForm::SoftmaxHead,
            ClassificationArg::LabelNegative => ClassificationForm::LabelNegative,
        };
    }
    Ok(run)
}

fn validate_run(run: &RunConfig) -> Result<()> {
    run.train.validate().map_err(|e| invalid(e.to_string()))?;
    let e = &run.encoder;
    if e.hidden == 0 || e.out_dim == 0 || e.max_len == 0 {
        return Err(invalid("encoder hidden, out_dim and max_len must be at least 1"));
    }
    run.loss.schedule_for(e.out_dim).map_err(|err| invalid(format!("schedule: {err}")))?;
    Ok(())
}

fn cmd_train(a: TrainArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let resume = match &a.resume {
        Some(p) => {
            let overrides = a.config.is_some()
                || a.regime.is_some()
                || a.seed.is_some()
                || a.epochs.is_some()
                || a.batch_size.is_some()
                || a.lr.is_some()
                || a.warmup_ratio.is_some()
                || a.eval_every.is_some()
                || a.checkpoint_every.is_some()
                || a.max_grad_norm.is_some()
                || a.hidden.is_some()
                || a.out_dim.is_some()
                || a.dims.is_some()
                || a.no_matryoshka
                || a.classification.is_some();
            if overrides {
                return Err(invalid("--resume uses the checkpoint's stored config; drop --config and override flags"));
            }
            Some(checkpoint::load(p).map_err(failed)?)
        }
        None => None,
    };
    let run = match &resume {
        Some(c) => c.run.clone(),
        None => resolve_run(&a)?,
    };
    validate_run(&run)?;
    match run.train.regime {
        Regime::MatryoshkaTriplet if a.triplets.is_none() => {
            return Err(invalid("the matryoshka-triplet regime needs --triplets"));
        }
        Regime::HybridMultitask if a.labeled.is_none() || a.scored.is_none() => {
            return Err(invalid("the hybrid-multitask regime needs --labeled and --scored"));
        }
        _ => {}
    }
    if a.eval_labeled.is_some() && a.eval_scored.is_none() {
        return Err(invalid("--eval-labeled needs --eval-scored"));
    }
    for (name, p) in [("triplets", &a.triplets), ("labeled", &a.labeled), ("scored", &a.scored)]
        .into_iter()
        .chain([("eval-scored", &a.eval_scored), ("eval-labeled", &a.eval_labeled)])
    {
        if let Some(p) = p {
            input_format(a.format, p, name)?;
        }
    }

    let triplets = match &a.triplets {
        Some(p) if run.train.regime == Regime::MatryoshkaTriplet => load_triplets(p, a.format, "triplets", stderr)?,
        _ => Vec::new(),
    };
    let (labeled, scored) = match (&a.labeled, &a.scored) {
        (Some(l), Some(s)) if run.train.regime == Regime::HybridMultitask => {
            (load_labeled(l, a.format, "labeled", stderr)?, load_scored(s, a.format, "scored", stderr)?)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let eval_scored = a.eval_scored.as_deref().map(|p| load_scored(p, a.format, "eval-scored", stderr)).transpose()?;
    let eval_labeled = a.eval_labeled.as_deref().map(|p| load_labeled(p, a.format, "eval-labeled", stderr)).transpose()?;

    let mut state = match resume {
        Some(Checkpoint { state, .. }) => state,
        None => {
            let texts: Vec<&str> = triplets
                .iter()
                .flat_map(|t| [t.anchor.as_str(), t.positive.as_str(), t.negative.as_str()])
                .chain(labeled.iter().flat_map(|p| [p.premise.as_str(), p.hypothesis.as_str()]))
                .chain(scored.iter().flat_map(|p| [p.text_a.as_str(), p.text_b.as_str()]))
                .collect();
            let tok = Tokenizer::from_texts(texts, run.encoder.max_len);
            let e = &run.encoder;
            let mut params = init_params(tok.vocab_size(), e.hidden, e.out_dim, run.train.seed).map_err(failed)?;
            params.normalize_output = e.normalize_output;
            TrainState::new(Encoder::new(tok, params).map_err(failed)?, &run)
        }
    };

    let data = match run.train.regime {
        Regime::MatryoshkaTriplet => TrainData::Triplets(&triplets),
        Regime::HybridMultitask => TrainData::Hybrid { labeled: &labeled, scored: &scored },
    };
    let dims = run.loss.schedule_for(run.encoder.out_dim).map_err(failed)?.dims().to_vec();
    let plan = eval_scored.as_ref().map(|pairs| EvalPlan {
        dataset: file_stem(a.eval_scored.as_deref().expect("eval set")),
        pairs,
        dims: dims.clone(),
        kinds: SimilarityKind::ALL.to_vec(),
        renormalize: run.loss.renormalize,
        labeled: eval_labeled.as_deref(),
    });
    let formats = a.reports.iter().map(|&r| r.into()).collect();
    let mut obs = FileObserver::create(&a.out, &run, formats, a.resume.is_some()).map_err(failed)?;
    let log = train(&mut state, &data, &run, plan.as_ref(), &mut obs).map_err(failed)?;

    let _ = writeln!(stdout, "trained to step {} ({} steps this run)", state.step(), log.steps.len());
    if let Some(last) = log.steps.last() {
        let _ = writeln!(stdout, "final loss {:.6} ({})", last.loss, last.task);
    }
    if let Some(ev) = log.evals.last() {
        write_summary(stdout, &ev.report, ev.accuracy);
    }
    let _ = writeln!(stdout, "run directory: {}", a.out.display());
    Ok(())
}

fn write_summary(out: &mut dyn Write, report: &EvalReport, accuracy: Option<f64>) {
    let _ = writeln!(out, "{} on {} ({})", report.meta.checkpoint, report.meta.dataset, report.meta.headline);
    let ret = retention(report).ok();
    for &m in &report.dims {
        let score = report.headline(m).unwrap_or(f64::NAN);
        match ret.as_ref().and_then(|r| r.ratio(m)) {
            Some(r) => {
                let _ = writeln!(out, "  dim {m:>5}: {score:.4} (retention {r:.4})");
            }
            None => {
                let _ = writeln!(out, "  dim {m:>5}: {score:.4}");
            }
        }
    }
    if let Some(acc) = accuracy {
        let _ = writeln!(out, "  accuracy: {acc:.4}");
    }
}

fn check_dim(dim: usize, full: usize, flag: &str) -> Result<()> {
    if dim == 0 || dim > full {
        return Err(invalid(format!("--{flag} {dim} is outside 1..={full}")));
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let fmt_scored = input_format(a.format, &a.scored, "scored")?;
    if let Some(l) = &a.labeled {
        input_format(a.format, l, "labeled")?;
    }
    if a.dims.as_ref().is_some_and(|d| d.is_empty()) || a.kinds.as_ref().is_some_and(|k| k.is_empty()) {
        return Err(invalid("--dims and --kinds need at least one value"));
    }
    let ckpt = checkpoint::load(&a.ckpt).map_err(failed)?;
    let enc = &ckpt.state.encoder;
    let full = enc.out_dim();
    let dims = match a.dims {
        Some(d) => d,
        None => ckpt.run.loss.schedule_for(full).map_err(failed)?.dims().to_vec(),
    };
    for &m in &dims {
        check_dim(m, full, "dims")?;
    }
    let kinds = a.kinds.unwrap_or_else(|| SimilarityKind::ALL.to_vec());
    let (ds, _) = io::load_dataset(&a.scored, nestembed_core::data::Schema::ScoredPair, fmt_scored).map_err(failed)?;
    let Dataset::Scored(pairs) = ds else { unreachable!() };
    let meta = EvalMeta {
        dataset: a.dataset.unwrap_or_else(|| file_stem(&a.scored)),
        checkpoint: file_stem(&a.ckpt),
        renormalize: a.renormalize.unwrap_or(ckpt.run.loss.renormalize),
        headline: Headline::default(),
    };
    let report = eval_sts(enc, &pairs, &dims, &kinds, meta).map_err(failed)?;
    let accuracy = match (&a.labeled, &ckpt.state.head) {
        (Some(p), Some(h)) => {
            let labeled = load_labeled(p, a.format, "labeled", stderr)?;
            Some(classification_accuracy(enc, h, &labeled).map_err(failed)?)
        }
        (Some(_), None) => return Err(invalid("--labeled needs a checkpoint with a pair head")),
        _ => None,
    };
    if let Some(dir) = &a.out {
        for &f in &a.reports {
            let f: ReportFormat = f.into();
            io::write_file(&report::path_in(dir, &report, f), report::render(&report, f).as_bytes()).map_err(failed)?;
        }
    }
    let _ = write!(stdout, "{}", report::to_markdown(&report));
    if let Some(acc) = accuracy {
        let _ = writeln!(stdout, "\naccuracy: {acc}");
    }
    Ok(())
}

#[derive(Serialize)]
struct EmbedLine<'a> {
    text: &'a str,
    embedding: &'a [f64],
}

fn cmd_embed(a: EmbedArgs, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.ckpt).map_err(failed)?;
    let enc = &ckpt.state.encoder;
    let dim = a.dim.unwrap_or(enc.out_dim());
    check_dim(dim, enc.out_dim(), "dim")?;
    let reader: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(BufReader::new(std::io::stdin()))
    } else {
        let f = std::fs::File::open(&a.input).map_err(|source| failed(IoError::Io { path: a.input.clone(), source }))?;
        Box::new(BufReader::new(f))
    };
    let mut buf = String::new();
    for line in reader.lines() {
        let text = line.map_err(failed)?;
        let z = truncate(&enc.embed(&text), dim, a.renormalize).map_err(failed)?;
        buf.push_str(&serde_json::to_string(&EmbedLine { text: &text, embedding: &z }).map_err(failed)?);
        buf.push('\n');
    }
    match &a.out {
        Some(p) => io::write_file(p, buf.as_bytes()).map_err(failed),
        None => stdout.write_all(buf.as_bytes()).map_err(failed),
    }
}

fn cmd_inspect(a: InspectArgs, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint::load(&a.ckpt).map_err(failed)?;
    let enc = &ckpt.state.encoder;
    let dim = a.dim.unwrap_or(enc.out_dim());
    check_dim(dim, enc.out_dim(), "dim")?;
    let card = inspect_pair(enc, &a.a, &a.b, dim, a.renormalize).map_err(failed)?;
    let _ = writeln!(stdout, "a: {}", card.text_a);
    let _ = writeln!(stdout, "b: {}", card.text_b);
    let _ = writeln!(stdout, "dim: {} (renormalize {})", card.dim, card.renormalize);
    for (k, s) in &card.scores {
        let _ = writeln!(stdout, "{:<10} {s:.6}", k.name());
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, stdout: &mut dyn Write) -> Result<()> {
    if a.instances == 0 {
        return Err(invalid("--instances must be at least 1"));
    }
    let results = gradcheck::run_suite(a.seed, a.instances).map_err(failed)?;
    let _ = writeln!(stdout, "{:<26} {:>9} {:>13}", "loss", "instances", "max rel err");
    let mut worst = 0.0f64;
    for r in &results {
        let status = if r.max_error < GRADCHECK_TOL { "ok" } else { "FAIL" };
        let _ = writeln!(stdout, "{:<26} {:>9} {:>13.3e} {status}", r.loss, r.instances, r.max_error);
        worst = worst.max(r.max_error);
    }
    if worst < GRADCHECK_TOL {
        Ok(())
    } else {
        Err(failed(format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}")))
    }
}

fn cmd_synth(a: SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig::new(a.classes, a.per_class, a.vocab, a.seed);
    let corpus = synth_corpus_with(cfg.clone()).map_err(|e| invalid(e.to_string()))?;
    let format: Format = a.format.into();
    let ext = match format {
        Format::Jsonl => "jsonl",
        Format::Tsv => "tsv",
    };
    let mut sets = vec![("", corpus)];
    if a.heldout {
        let held = synth_corpus_with(SynthConfig { seed: heldout_seed(a.seed), ..cfg }).map_err(failed)?;
        sets.push(("heldout_", held));
    }
    for (prefix, c) in sets {
        let files = [
            ("triplets", Dataset::Triplets(c.triplets)),
            ("labeled", Dataset::Labeled(c.labeled)),
            ("scored", Dataset::Scored(c.scored)),
        ];
        for (name, ds) in files {
            let path = a.out.join(format!("{prefix}{name}.{ext}"));
            io::write_dataset(&path, &ds, format).map_err(failed)?;
            let _ = writeln!(stdout, "{} ({} records)", path.display(), ds.len());
        }
    }
    Ok(())
}
