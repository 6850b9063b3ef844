//! CSV, Markdown and JSON renderings of an [`EvalReport`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nestembed_core::eval::{retention, Correlation, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json];

    pub fn ext(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "md" | "markdown" => Some(ReportFormat::Markdown),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

/// `{checkpoint}_{dataset}_eval.{ext}`
pub fn file_name(report: &EvalReport, format: ReportFormat) -> String {
    format!("{}_{}_eval.{}", report.meta.checkpoint, report.meta.dataset, format.ext())
}

pub fn path_in(dir: &Path, report: &EvalReport, format: ReportFormat) -> PathBuf {
    dir.join(file_name(report, format))
}

pub fn render(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Markdown => to_markdown(report),
        ReportFormat::Json => to_json(report),
    }
}

/// One row per grid entry in report order. Scores use the shortest
/// representation that parses back to the same float.
pub fn to_csv(report: &EvalReport) -> String {
    let mut s = String::from("dim,kind,correlation,score\n");
    for e in &report.entries {
        let _ = writeln!(s, "{},{},{},{}", e.dim, e.kind, e.correlation, e.score);
    }
    s
}

/// Dims as rows, `correlation-kind` metrics as columns, followed by the
/// retention of the headline metric.
pub fn to_markdown(report: &EvalReport) -> String {
    let m = &report.meta;
    let mut s = String::new();
    let _ = writeln!(s, "# {} on {}\n", m.checkpoint, m.dataset);
    let _ = writeln!(s, "- headline: {}", m.headline);
    let _ = writeln!(s, "- renormalize: {}\n", m.renormalize);
    let cols: Vec<_> = report.kinds.iter().flat_map(|&k| Correlation::ALL.map(|c| (k, c))).collect();
    s.push_str("| dim |");
    for (k, c) in &cols {
        let _ = write!(s, " {c}-{k} |");
    }
    s.push_str("\n|----:|");
    for _ in &cols {
        s.push_str("------:|");
    }
    s.push('\n');
    for &dim in &report.dims {
        let _ = write!(s, "| {dim} |");
        for &(k, c) in &cols {
            match report.get(dim, k, c) {
                Some(v) => {
                    let _ = write!(s, " {v:.4} |");
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    if let Ok(r) = retention(report) {
        let _ = writeln!(s, "\n| dim | {} | retention |", m.headline);
        s.push_str("|----:|------:|------:|\n");
        for row in &r.rows {
            let _ = writeln!(s, "| {} | {:.4} | {:.4} |", row.dim, row.average, row.ratio);
        }
    }
    s
}

pub fn to_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> serde_json::Result<EvalReport> {
    serde_json::from_str(text)
}
