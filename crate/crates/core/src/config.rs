//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and unparsable values are rejected. [`RunConfig::to_text`]
//! writes every key, and parsing that text reproduces the same config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::compute::Activation;
use crate::dataio::InputFormat;
use crate::model::{Aggregator, L2Scope, ModelConfig};
use crate::train::TrainConfig;

pub const MAX_TASKS: usize = 8;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Malformed { line: usize },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{0}' given twice")]
    Duplicate(String),
    #[error("invalid value {value:?} for '{key}': {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub raw: Option<PathBuf>,
    pub raw_format: InputFormat,
    pub min_core: usize,
    pub test_frac: f64,
    pub valid_frac: f64,
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub k: usize,
    pub dim: usize,
    pub layer_dims: Option<Vec<usize>>,
    pub attention_dim: Option<usize>,
    pub activation: Activation,
    pub logit_activation: Activation,
    pub aggregator: Aggregator,
    pub dropout: f64,
    pub l2_scope: L2Scope,

    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub topn: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            raw: None,
            raw_format: InputFormat::Pairs,
            min_core: 10,
            test_frac: 0.2,
            valid_frac: 0.125,
            corpus: None,
            out_dir: PathBuf::from("runs"),
            seed: 2020,
            k: 2,
            dim: 256,
            layer_dims: None,
            attention_dim: None,
            activation: Activation::default(),
            logit_activation: Activation::default(),
            aggregator: Aggregator::Attentive,
            dropout: 0.1,
            l2_scope: L2Scope::All,
            lr: 1e-4,
            l2: 1e-6,
            batch_size: 1024,
            max_epochs: 400,
            patience: 10,
            topn: 20,
        }
    }
}

const KEYS: &[&str] = &[
    "raw",
    "raw_format",
    "min_core",
    "test_frac",
    "valid_frac",
    "corpus",
    "out_dir",
    "seed",
    "k",
    "dim",
    "layer_dims",
    "attention_dim",
    "activation",
    "logit_activation",
    "aggregator",
    "dropout",
    "l2_scope",
    "lr",
    "l2",
    "batch_size",
    "max_epochs",
    "patience",
    "topn",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed { line: idx + 1 })?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate(key.into()));
            }
            cfg.set(key, value.trim())?;
            seen.push(key.into());
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override such as a `--set` flag.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment.split_once('=').ok_or(ConfigError::Malformed { line: 0 })?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let activation = |v: &str| -> Result<Activation, ConfigError> { parse_value(key, v) };
        match key {
            "raw" => self.raw = parse_path(value),
            "raw_format" => self.raw_format = parse_value(key, value)?,
            "min_core" => self.min_core = parse_value(key, value)?,
            "test_frac" => self.test_frac = parse_value(key, value)?,
            "valid_frac" => self.valid_frac = parse_value(key, value)?,
            "corpus" => self.corpus = parse_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "layer_dims" => {
                self.layer_dims = if value.is_empty() {
                    None
                } else {
                    Some(
                        value
                            .split(',')
                            .map(|d| parse_value(key, d.trim()))
                            .collect::<Result<_, _>>()?,
                    )
                }
            }
            "attention_dim" => {
                let d: usize = parse_value(key, value)?;
                self.attention_dim = (d > 0).then_some(d);
            }
            "activation" => self.activation = activation(value)?,
            "logit_activation" => self.logit_activation = activation(value)?,
            "aggregator" => self.aggregator = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "l2_scope" => self.l2_scope = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "l2" => self.l2 = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "topn" => self.topn = parse_value(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=MAX_TASKS).contains(&self.k) {
            return bad(format!("k must lie in 1..={MAX_TASKS}, got {}", self.k));
        }
        if let Some(dims) = &self.layer_dims {
            if dims.len() != self.k {
                return bad(format!("layer_dims has {} entries but k = {}", dims.len(), self.k));
            }
            if dims.contains(&0) {
                return bad("layer_dims entries must be positive".into());
            }
        } else if self.dim < self.k {
            return bad(format!("dim {} cannot be split over k = {}", self.dim, self.k));
        }
        if self.min_core == 0 {
            return bad("min_core must be at least 1".into());
        }
        for (name, f) in [
            ("test_frac", self.test_frac),
            ("valid_frac", self.valid_frac),
            ("dropout", self.dropout),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1), got {f}"));
            }
        }
        for (name, f) in [("lr", self.lr), ("l2", self.l2)] {
            if !(f.is_finite() && f >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {f}"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.topn == 0 {
            return bad("batch_size, max_epochs and topn must be positive".into());
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut cfg = match &self.layer_dims {
            Some(dims) => {
                let mut c = ModelConfig::with_total_dim(1, 1).expect("trivial config");
                c.layer_dims = dims.clone();
                c
            }
            None => ModelConfig::with_total_dim(self.k, self.dim).expect("validated dims"),
        };
        cfg.attention_dim = self.attention_dim;
        cfg.activation = self.activation;
        cfg.logit_activation = self.logit_activation;
        cfg.aggregator = self.aggregator;
        cfg.dropout = self.dropout;
        cfg.l2_scope = self.l2_scope;
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            l2: self.l2,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            // Offset so the training stream differs from the init stream.
            seed: self.seed.wrapping_add(1),
            cutoff: self.topn,
        }
    }

    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let format = match self.raw_format {
            InputFormat::Pairs => "pairs",
            InputFormat::Adjacency => "adjacency",
        };
        let dims = self
            .layer_dims
            .as_ref()
            .map(|d| d.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
            .unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("raw", path(&self.raw));
        kv("raw_format", format.into());
        kv("min_core", self.min_core.to_string());
        kv("test_frac", self.test_frac.to_string());
        kv("valid_frac", self.valid_frac.to_string());
        kv("corpus", path(&self.corpus));
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("k", self.k.to_string());
        kv("dim", self.dim.to_string());
        kv("layer_dims", dims);
        kv("attention_dim", self.attention_dim.unwrap_or(0).to_string());
        kv("activation", self.activation.to_string());
        kv("logit_activation", self.logit_activation.to_string());
        kv("aggregator", self.aggregator.to_string());
        kv("dropout", self.dropout.to_string());
        kv("l2_scope", self.l2_scope.to_string());
        kv("lr", self.lr.to_string());
        kv("l2", self.l2.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("topn", self.topn.to_string());
        debug_assert_eq!(out.lines().count(), KEYS.len());
        out
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }
}
