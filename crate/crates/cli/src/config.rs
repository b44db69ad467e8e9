use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tagcn::model::ModelConfig;
use tagcn::skeleton::StreamKind;
use tagcn::train::TrainConfig;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory used for training.
    pub train: Option<PathBuf>,
    /// Held-out dataset directory evaluated after each epoch.
    pub eval: Option<PathBuf>,
    /// Subtract the first body's center joint per frame when preprocessing.
    pub recenter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub topk: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            topk: vec![1, 5],
        }
    }
}

/// Everything a run depends on, read from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Stream a single model is trained and evaluated on.
    pub stream: StreamKind,
    /// Streams written by `preprocess`.
    pub streams: Vec<StreamKind>,
    pub eval: EvalConfig,
    /// Evaluation workers; 1 keeps every output bitwise reproducible.
    pub threads: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            stream: StreamKind::Joint,
            streams: StreamKind::DEFAULT_ENSEMBLE.to_vec(),
            eval: EvalConfig::default(),
            threads: 1,
        }
    }
}

impl CliConfig {
    /// Defaults merged with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| {
            anyhow::Error::new(tagcn::Error::Config(format!("{}: {e}", path.display())))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.threads == 0 || self.eval.batch_size == 0 {
            return Err(tagcn::Error::Config("threads and eval.batch_size must be at least 1".into()).into());
        }
        if self.eval.topk.contains(&0) {
            return Err(tagcn::Error::Config("eval.topk entries must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
