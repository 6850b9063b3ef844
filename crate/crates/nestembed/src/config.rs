//! TOML run configuration.
//!
//! ```toml
//! [train]
//! regime = "matryoshka-triplet"   # or "hybrid-multitask"
//! seed = 1
//! epochs = 5
//! batch_size = 32
//! learning_rate = 0.1
//! warmup_ratio = 0.1
//! eval_every = 200
//! checkpoint_every = 200
//! # max_grad_norm = 1.0
//!
//! [loss]
//! scale = 20.0
//! tau_sts = 0.05
//! tau_cls = 0.05
//! matryoshka = true
//! renormalize = true
//! classification = "softmax-head"  # or "label-negative"
//! schedule = { dims = [64, 32, 16, 8], weights = [1.0, 1.0, 1.0, 1.0] }
//!
//! [encoder]
//! hidden = 64
//! out_dim = 64
//! max_len = 512
//! normalize_output = true
//! ```
//!
//! Every key is optional except the seed, which must come from the file or
//! from `--seed`. Unknown keys are rejected.

use std::path::Path;

use nestembed_core::trainer::{RunConfig, TrainConfig};

use crate::io::{read_file, IoError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

/// A parsed config and whether it pinned the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub seed_given: bool,
}

pub fn parse(text: &str, origin: &str) -> Result<LoadedConfig, ConfigError> {
    let err = |msg: String| ConfigError::Parse { path: origin.to_string(), msg };
    let value: toml::Table = toml::from_str(text).map_err(|e| err(e.to_string()))?;
    let seed_given = value.get("train").and_then(|t| t.as_table()).is_some_and(|t| t.contains_key("seed"));
    let mut run: RunConfig = toml::from_str(text).map_err(|e| err(e.to_string()))?;
    // batch size follows the regime unless set explicitly
    let batch_given = value.get("train").and_then(|t| t.as_table()).is_some_and(|t| t.contains_key("batch_size"));
    if !batch_given {
        run.train.batch_size = TrainConfig::for_regime(run.train.regime).batch_size;
    }
    Ok(LoadedConfig { run, seed_given })
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| ConfigError::Parse { path: path.display().to_string(), msg: "not valid UTF-8".into() })?;
    parse(&text, &path.display().to_string())
}

pub fn to_toml(run: &RunConfig) -> String {
    toml::to_string(run).expect("run config serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nestembed_core::trainer::Regime;

    #[test]
    fn documented_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.strip_prefix("//!").unwrap_or(l).strip_prefix(' ').unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let c = parse(&text, "doc").unwrap();
        assert!(c.seed_given);
        assert_eq!(c.run.train.regime, Regime::MatryoshkaTriplet);
        assert_eq!(c.run.loss.schedule.as_ref().unwrap().dims(), [64, 32, 16, 8]);
    }

    #[test]
    fn defaults_and_regime_batch() {
        let c = parse("[train]\nregime = \"matryoshka-triplet\"\n", "t").unwrap();
        assert!(!c.seed_given);
        assert_eq!(c.run.train.batch_size, 128);
        assert_eq!(parse("", "t").unwrap().run, RunConfig::default());
        assert!(parse("[train]\nlearning_rat = 1.0\n", "t").is_err());
    }

    #[test]
    fn round_trip() {
        let mut run = RunConfig::default();
        run.train.seed = 42;
        run.train.max_grad_norm = Some(1.5);
        assert_eq!(parse(&to_toml(&run), "rt").unwrap().run, run);
    }
}
