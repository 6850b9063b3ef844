//! Run directory writer: JSONL run log, checkpoints and eval reports.
//!
//! ```text
//! <out>/config.toml
//! <out>/runlog.jsonl
//! <out>/checkpoints/step-N.ckpt
//! <out>/reports/step-N_<dataset>_eval.{csv,md,json}
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nestembed_core::trainer::{checkpoint_id, EvalRecord, RunConfig, StepRecord, TrainObserver, TrainState};
use serde::{Deserialize, Serialize};

use crate::io::{write_file, IoError};
use crate::report::{self, ReportFormat};
use crate::{checkpoint, config};

/// One line of `runlog.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Step(StepRecord),
    Eval(EvalRecord),
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>, IoError> {
    let file = File::open(path).map_err(|source| IoError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| IoError::Line { path: path.into(), line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("{}.ckpt", checkpoint_id(step)))
}

pub struct FileObserver {
    dir: PathBuf,
    run: RunConfig,
    log: File,
    formats: Vec<ReportFormat>,
}

impl FileObserver {
    /// Creates the run directory and writes `config.toml`. With `append`
    /// the existing run log is extended (resume); otherwise it is replaced.
    pub fn create(dir: &Path, run: &RunConfig, formats: Vec<ReportFormat>, append: bool) -> Result<Self, IoError> {
        let err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| IoError::Io { path: p, source }
        };
        fs::create_dir_all(dir).map_err(err(dir))?;
        write_file(&dir.join("config.toml"), config::to_toml(run).as_bytes())?;
        let log_path = dir.join("runlog.jsonl");
        let log = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&log_path)
            .map_err(err(&log_path))?;
        Ok(Self { dir: dir.to_path_buf(), run: run.clone(), log, formats })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn line(&mut self, line: &LogLine) -> Result<(), String> {
        let mut s = serde_json::to_string(line).map_err(|e| e.to_string())?;
        s.push('\n');
        self.log.write_all(s.as_bytes()).and_then(|_| self.log.flush()).map_err(|e| format!("run log: {e}"))
    }
}

impl TrainObserver for FileObserver {
    fn on_step(&mut self, record: &StepRecord) -> Result<(), String> {
        self.line(&LogLine::Step(record.clone()))
    }

    fn on_eval(&mut self, record: &EvalRecord) -> Result<(), String> {
        self.line(&LogLine::Eval(record.clone()))?;
        let dir = self.dir.join("reports");
        for &f in &self.formats {
            let path = report::path_in(&dir, &record.report, f);
            write_file(&path, report::render(&record.report, f).as_bytes()).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<(), String> {
        let path = checkpoint_path(&self.dir, state.step());
        checkpoint::save(&path, state, &self.run).map_err(|e| e.to_string())
    }
}
