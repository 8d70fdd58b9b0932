use std::path::PathBuf;

use deptree_lm::treelm::{Dtype, TreeLmConfig, Variant};
use deptree_lm::trainer::TrainConfig;
use deptree_lm::{Error, Result};
use serde::{Deserialize, Serialize};

/// Input data and vocabulary settings of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    /// Without it, `valid_size` trees are held out of the training file.
    pub valid: Option<PathBuf>,
    /// Without it, the vocabulary is built from the training trees.
    pub vocab: Option<PathBuf>,
    pub valid_size: usize,
    pub min_count: u64,
    pub lowercase: bool,
    pub skip_nonprojective: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            valid: None,
            vocab: None,
            valid_size: 4000,
            min_count: 5,
            lowercase: true,
            skip_nonprojective: false,
        }
    }
}

/// Model hyperparameters. `embed` and `vocab_size` are filled in when the
/// configuration is resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: usize,
    /// Defaults to `hidden / 2`.
    pub embed: Option<usize>,
    pub layers: usize,
    pub dropout: f64,
    pub h0_fill: f64,
    pub init_range: f64,
    pub forget_bias: f64,
    pub vocab_size: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let base = TreeLmConfig::new(Variant::LdTreeLstm, 2, 300, 1);
        ModelConfig {
            variant: base.variant,
            hidden: base.hidden,
            embed: None,
            layers: base.layers,
            dropout: base.dropout,
            h0_fill: base.h0_fill,
            init_range: base.init_range,
            forget_bias: base.forget_bias,
            vocab_size: None,
        }
    }
}

impl ModelConfig {
    /// Materialises the derived sizes for a vocabulary of `vocab_size`.
    pub fn resolve(&mut self, vocab_size: usize) -> Result<TreeLmConfig> {
        if let Some(v) = self.vocab_size {
            if v != vocab_size {
                return Err(Error::Config(format!(
                    "config fixes vocab_size {v} but the vocabulary has {vocab_size} words"
                )));
            }
        }
        self.vocab_size = Some(vocab_size);
        let embed = *self.embed.get_or_insert((self.hidden / 2).max(1));
        let cfg = TreeLmConfig {
            variant: self.variant,
            vocab_size,
            hidden: self.hidden,
            embed,
            layers: self.layers,
            dropout: self.dropout,
            h0_fill: self.h0_fill,
            init_range: self.init_range,
            forget_bias: self.forget_bias,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a training run depends on. The resolved value is written to
/// `config.json` in the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub dtype: Dtype,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: None,
            threads: 1,
            dtype: Dtype::F64,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            context: format!("reading {}", path.display()),
            source: e,
        })?;
        RunConfig::from_json(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serialises")
    }
}
